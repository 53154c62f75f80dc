#pragma once

// JSON forms of the architecture and training settings, shared by the run
// configuration and checkpoint metadata.

#include <json.hpp>

#include "mmgan/cache.hpp"
#include "mmgan/networks.hpp"
#include "mmgan/scenario.hpp"
#include "mmgan/train_config.hpp"

namespace mmgan {

inline nlohmann::json to_json(const GeneratorSpec& g) {
  return {{"channels", g.channels},
          {"depth", g.depth},
          {"widths", g.widths},
          {"final_activation", to_string(g.final_activation)},
          {"dropout", g.dropout_p},
          {"dropout_blocks", g.dropout_blocks}};
}

inline GeneratorSpec generator_spec_from_json(const nlohmann::json& j) {
  GeneratorSpec g;
  g.channels = j.at("channels").get<int>();
  g.depth = j.at("depth").get<int>();
  g.widths = j.at("widths").get<std::vector<int>>();
  g.final_activation = parse_final_activation(j.at("final_activation").get<std::string>());
  g.dropout_p = j.at("dropout").get<double>();
  g.dropout_blocks = j.at("dropout_blocks").get<int>();
  return g;
}

inline nlohmann::json to_json(const DiscriminatorSpec& d) {
  return {{"channels", d.channels}, {"n_blocks", d.n_blocks}, {"widths", d.widths},
          {"input_noise_sigma", d.input_noise_sigma}};
}

inline DiscriminatorSpec discriminator_spec_from_json(const nlohmann::json& j) {
  DiscriminatorSpec d;
  d.channels = j.at("channels").get<int>();
  d.n_blocks = j.at("n_blocks").get<int>();
  d.widths = j.at("widths").get<std::vector<int>>();
  d.input_noise_sigma = j.at("input_noise_sigma").get<double>();
  return d;
}

inline nlohmann::json to_json(const CurriculumSchedule& s) {
  return {{"mode", to_string(s.mode)}, {"tier_epochs", s.tier_epochs}, {"uniform_after", s.uniform_after}};
}

inline nlohmann::json to_json(const TrainConfig& c, const std::vector<std::string>& channels) {
  return {{"mode", c.mode.is_miso() ? "miso" : "mimo"},
          {"miso_target", c.mode.is_miso() ? nlohmann::json(channels.at(static_cast<std::size_t>(*c.mode.miso_target)))
                                           : nlohmann::json(nullptr)},
          {"lambda", c.lambda},
          {"d_loss_scale", c.d_loss_scale},
          {"lr", c.lr},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"implicit_conditioning", c.implicit_conditioning},
          {"imputation", to_string(c.imputation)},
          {"curriculum", to_json(c.schedule)},
          {"checkpoint_every", c.checkpoint_every}};
}

}  // namespace mmgan
