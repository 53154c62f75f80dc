#pragma once

// Run configuration: one JSON document with sections dataset, preprocessing,
// generator, discriminator, training, evaluation plus seed and output_dir.
// Every section is optional; absent keys take the mode's defaults. Unknown
// keys anywhere are rejected.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmgan/conditioning.hpp"
#include "mmgan/error.hpp"
#include "mmgan/networks.hpp"
#include "mmgan/scenario.hpp"
#include "mmgan/serialization.hpp"
#include "mmgan/train_config.hpp"

namespace mmgan {

struct DatasetConfig {
  std::filesystem::path root;       // raw NIfTI tree: <root>/<patient>/<channel>.nii[.gz]
  std::filesystem::path cache_dir;  // preprocessed slices; defaults to <output_dir>/cache
  std::vector<std::string> channels = default_channel_names();
  std::size_t n_test = 0;
  std::size_t n_val = 0;
};

struct PreprocessConfig {
  std::size_t size = 256;
  double threshold = 0.0;
};

struct EvaluationConfig {
  std::vector<std::string> scenarios;  // empty: every valid scenario of the mode
  bool renormalize = true;
  double i_max = 1.0;
};

struct RunConfig {
  DatasetConfig dataset;
  PreprocessConfig preprocessing;
  GeneratorSpec generator;
  DiscriminatorSpec discriminator;
  TrainConfig training;
  EvaluationConfig evaluation;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "run";

  int channels() const { return static_cast<int>(dataset.channels.size()); }

  std::filesystem::path cache_dir() const {
    return dataset.cache_dir.empty() ? output_dir / "cache" : dataset.cache_dir;
  }

  std::vector<Scenario> eval_scenarios() const {
    if (evaluation.scenarios.empty()) return enumerate_valid(channels(), training.mode);
    std::vector<Scenario> out;
    for (const auto& s : evaluation.scenarios) out.push_back(parse_scenario(s, channels()));
    return out;
  }

  void validate() const {
    const int c = channels();
    if (c < 2) throw ConfigError("dataset.channels needs at least two sequences");
    if (std::set<std::string>(dataset.channels.begin(), dataset.channels.end()).size() != dataset.channels.size()) {
      throw ConfigError("dataset.channels contains duplicates");
    }
    generator.validate();
    discriminator.validate();
    training.validate();
    if (generator.channels != c || discriminator.channels != c) {
      throw ConfigError("network channel counts must equal the number of dataset channels");
    }
    if (preprocessing.size != static_cast<std::size_t>(generator.image_size())) {
      throw ConfigError("preprocessing.size " + std::to_string(preprocessing.size) + " does not match generator depth " +
                        std::to_string(generator.depth) + " (needs " + std::to_string(generator.image_size()) + ")");
    }
    if (preprocessing.size % static_cast<std::size_t>(discriminator.downsampling()) != 0) {
      throw ConfigError("preprocessing.size must be divisible by the discriminator downsampling");
    }
    if (!(evaluation.i_max > 0.0)) throw ConfigError("evaluation.i_max must be positive");
    (void)eval_scenarios();
  }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ConfigError("unknown key '" + (where.empty() ? key : where + "." + key) + "'");
    }
  }
}

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

inline int channel_index(const std::vector<std::string>& channels, const nlohmann::json& v) {
  if (v.is_number_integer()) return v.get<int>();
  const auto name = v.get<std::string>();
  const auto it = std::find(channels.begin(), channels.end(), name);
  if (it == channels.end()) throw ConfigError("miso_target '" + name + "' is not a configured channel");
  return static_cast<int>(it - channels.begin());
}

}  // namespace detail

// Defaults for a mode: many-to-one swaps in the two-block noisy
// discriminator, a linear output, 30 uniform-sampling epochs at batch 2, and
// scores without renormalization.
inline RunConfig defaults_for(const SynthesisMode& mode, int channels = 4) {
  RunConfig r;
  r.dataset.channels.resize(static_cast<std::size_t>(channels));
  if (channels != 4) {
    for (int k = 0; k < channels; ++k) r.dataset.channels[static_cast<std::size_t>(k)] = "seq" + std::to_string(k);
  }
  r.generator.channels = channels;
  r.discriminator.channels = channels;
  if (mode.is_miso()) {
    r.training = TrainConfig::miso_defaults(*mode.miso_target);
    r.discriminator = DiscriminatorSpec::small(channels);
    r.generator.final_activation = FinalActivation::Linear;
    r.evaluation.renormalize = false;
  }
  return r;
}

inline RunConfig parse_run_config(const nlohmann::json& j) {
  using detail::read_opt;
  try {
    detail::reject_unknown(j, "",
                           {"dataset", "preprocessing", "generator", "discriminator", "training", "evaluation", "seed",
                            "output_dir"});
    const auto section = [&](const char* name) { return j.contains(name) ? j.at(name) : nlohmann::json::object(); };
    const auto ds = section("dataset");
    const auto pp = section("preprocessing");
    const auto gen = section("generator");
    const auto dis = section("discriminator");
    const auto tr = section("training");
    const auto ev = section("evaluation");
    detail::reject_unknown(ds, "dataset", {"root", "cache_dir", "channels", "n_test", "n_val"});
    detail::reject_unknown(pp, "preprocessing", {"size", "threshold"});
    detail::reject_unknown(gen, "generator", {"depth", "widths", "final_activation", "dropout", "dropout_blocks"});
    detail::reject_unknown(dis, "discriminator", {"n_blocks", "widths", "input_noise_sigma"});
    detail::reject_unknown(tr, "training",
                           {"mode", "miso_target", "lambda", "d_loss_scale", "lr", "beta1", "beta2", "batch_size",
                            "epochs", "implicit_conditioning", "imputation", "curriculum", "checkpoint_every"});
    detail::reject_unknown(ev, "evaluation", {"scenarios", "renormalize", "i_max"});

    auto channels = default_channel_names();
    read_opt(ds, "channels", channels);

    std::string mode_name = "mimo";
    read_opt(tr, "mode", mode_name);
    SynthesisMode mode;
    if (mode_name == "miso") {
      if (!tr.contains("miso_target")) throw ConfigError("training.miso_target is required in miso mode");
      mode = SynthesisMode::miso(detail::channel_index(channels, tr.at("miso_target")));
      if (*mode.miso_target < 0 || *mode.miso_target >= static_cast<int>(channels.size())) {
        throw ConfigError("training.miso_target out of range");
      }
    } else if (mode_name != "mimo") {
      throw ConfigError("training.mode must be 'mimo' or 'miso', got '" + mode_name + "'");
    }

    auto r = defaults_for(mode, static_cast<int>(channels.size()));
    r.dataset.channels = channels;
    if (ds.contains("root")) r.dataset.root = ds.at("root").get<std::string>();
    if (ds.contains("cache_dir") && !ds.at("cache_dir").is_null()) r.dataset.cache_dir = ds.at("cache_dir").get<std::string>();
    read_opt(ds, "n_test", r.dataset.n_test);
    read_opt(ds, "n_val", r.dataset.n_val);

    read_opt(pp, "size", r.preprocessing.size);
    read_opt(pp, "threshold", r.preprocessing.threshold);

    read_opt(gen, "depth", r.generator.depth);
    if (gen.contains("depth") && !gen.contains("widths")) {
      // Default widths follow the 64-128-256-512 ladder, then stay at 512.
      r.generator.widths.clear();
      for (int i = 0; i < r.generator.depth; ++i) r.generator.widths.push_back(std::min(512, 64 << std::min(i, 3)));
    }
    read_opt(gen, "widths", r.generator.widths);
    if (gen.contains("final_activation")) {
      r.generator.final_activation = parse_final_activation(gen.at("final_activation").get<std::string>());
    }
    read_opt(gen, "dropout", r.generator.dropout_p);
    read_opt(gen, "dropout_blocks", r.generator.dropout_blocks);

    read_opt(dis, "n_blocks", r.discriminator.n_blocks);
    if (dis.contains("n_blocks") && !dis.contains("widths")) {
      r.discriminator.widths.clear();
      for (int i = 0; i < r.discriminator.n_blocks; ++i) r.discriminator.widths.push_back(std::min(512, 64 << i));
    }
    read_opt(dis, "widths", r.discriminator.widths);
    read_opt(dis, "input_noise_sigma", r.discriminator.input_noise_sigma);

    auto& t = r.training;
    read_opt(tr, "lambda", t.lambda);
    read_opt(tr, "d_loss_scale", t.d_loss_scale);
    read_opt(tr, "lr", t.lr);
    read_opt(tr, "beta1", t.beta1);
    read_opt(tr, "beta2", t.beta2);
    read_opt(tr, "batch_size", t.batch_size);
    read_opt(tr, "epochs", t.epochs);
    t.schedule.total_epochs = t.epochs;
    read_opt(tr, "implicit_conditioning", t.implicit_conditioning);
    if (tr.contains("imputation")) t.imputation = parse_imputation(tr.at("imputation").get<std::string>());
    read_opt(tr, "checkpoint_every", t.checkpoint_every);
    if (tr.contains("curriculum")) {
      const auto& cl = tr.at("curriculum");
      detail::reject_unknown(cl, "training.curriculum", {"mode", "tier_epochs", "uniform_after"});
      if (cl.contains("mode")) t.schedule.mode = parse_sampling_mode(cl.at("mode").get<std::string>());
      read_opt(cl, "tier_epochs", t.schedule.tier_epochs);
      read_opt(cl, "uniform_after", t.schedule.uniform_after);
    }

    read_opt(ev, "scenarios", r.evaluation.scenarios);
    read_opt(ev, "renormalize", r.evaluation.renormalize);
    read_opt(ev, "i_max", r.evaluation.i_max);

    read_opt(j, "seed", r.seed);
    t.seed = r.seed;
    if (j.contains("output_dir")) r.output_dir = j.at("output_dir").get<std::string>();
    r.validate();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  } catch (const InvalidScenario& e) {
    throw ConfigError(e.what());
  }
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_run_config(j);
}

// Fully resolved form; parse_run_config(to_json(r)) reproduces r.
inline nlohmann::json to_json(const RunConfig& r) {
  auto gen = to_json(r.generator);
  gen.erase("channels");
  auto dis = to_json(r.discriminator);
  dis.erase("channels");
  auto tr = to_json(r.training, r.dataset.channels);
  if (tr["miso_target"].is_null()) tr.erase("miso_target");
  return {{"dataset",
           {{"root", r.dataset.root.string()},
            {"cache_dir", r.dataset.cache_dir.empty() ? nlohmann::json(nullptr) : nlohmann::json(r.dataset.cache_dir.string())},
            {"channels", r.dataset.channels},
            {"n_test", r.dataset.n_test},
            {"n_val", r.dataset.n_val}}},
          {"preprocessing", {{"size", r.preprocessing.size}, {"threshold", r.preprocessing.threshold}}},
          {"generator", gen},
          {"discriminator", dis},
          {"training", tr},
          {"evaluation",
           {{"scenarios", r.evaluation.scenarios}, {"renormalize", r.evaluation.renormalize}, {"i_max", r.evaluation.i_max}}},
          {"seed", r.seed},
          {"output_dir", r.output_dir.string()}};
}

inline void write_resolved_config(const std::filesystem::path& dir, const RunConfig& r) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "resolved_config.json");
  if (!out) throw IoError("cannot write " + (dir / "resolved_config.json").string());
  out << to_json(r).dump(2) << "\n";
}

}  // namespace mmgan
