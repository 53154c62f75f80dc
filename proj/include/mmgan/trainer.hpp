#pragma once

// Adversarial training: one generator update followed by one discriminator
// update per batch, the epoch loop driving scenario sampling, loss logging
// and checkpointing.

#include <torch/torch.h>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmgan/cache.hpp"
#include "mmgan/conditioning.hpp"
#include "mmgan/error.hpp"
#include "mmgan/losses.hpp"
#include "mmgan/networks.hpp"
#include "mmgan/scenario.hpp"
#include "mmgan/serialization.hpp"
#include "mmgan/train_config.hpp"
#include "mmgan/volume.hpp"

namespace mmgan {

inline constexpr int kCheckpointSchemaVersion = 1;
inline constexpr double kInitSigma = 0.02;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Independent stream seed for (seed, a, b).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix64(splitmix64(splitmix64(seed) ^ a) ^ (b * 0x632be59bd9b4e019ull));
}

inline torch::Tensor to_tensor(const SliceStack& s) {
  auto t = torch::empty({static_cast<std::int64_t>(s.count), static_cast<std::int64_t>(s.channels),
                         static_cast<std::int64_t>(s.height), static_cast<std::int64_t>(s.width)},
                        torch::kFloat);
  std::memcpy(t.data_ptr<float>(), s.data.data(), s.data.size() * sizeof(float));
  return t;
}

struct LossRecord {
  int epoch = 0;
  std::int64_t step = 0;
  std::string scenario;
  int tier = 0;
  double l1_sel = 0.0;
  double l2_adv = 0.0;
  double d_loss = 0.0;
  double wall_time = 0.0;
};

// ---------------------------------------------------------------------------
// Checkpoint metadata

struct CheckpointMeta {
  int schema_version = kCheckpointSchemaVersion;
  GeneratorSpec generator;
  DiscriminatorSpec discriminator;
  std::vector<std::string> channels;
  int epoch = 0;  // completed epochs
  std::uint64_t seed = 0;
  std::optional<PreprocessParams> preprocessing;
  nlohmann::json training;
};

inline nlohmann::json to_json(const CheckpointMeta& m) {
  return {{"schema_version", m.schema_version},
          {"generator", to_json(m.generator)},
          {"discriminator", to_json(m.discriminator)},
          {"channels", m.channels},
          {"epoch", m.epoch},
          {"seed", m.seed},
          {"preprocessing", m.preprocessing ? to_json(*m.preprocessing) : nlohmann::json(nullptr)},
          {"training", m.training}};
}

inline std::filesystem::path checkpoint_meta_path(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p.replace_extension(".json");
  return p;
}

inline CheckpointMeta read_checkpoint_meta(const std::filesystem::path& checkpoint) {
  const auto path = checkpoint_meta_path(checkpoint);
  if (!std::filesystem::exists(path)) throw IoError("checkpoint metadata not found: " + path.string());
  try {
    std::ifstream in(path);
    const auto j = nlohmann::json::parse(in);
    CheckpointMeta m;
    m.schema_version = j.at("schema_version").get<int>();
    if (m.schema_version != kCheckpointSchemaVersion) {
      throw IncompatibleCheckpoint(path.string() + ": schema version " + std::to_string(m.schema_version));
    }
    m.generator = generator_spec_from_json(j.at("generator"));
    m.discriminator = discriminator_spec_from_json(j.at("discriminator"));
    m.channels = j.at("channels").get<std::vector<std::string>>();
    m.epoch = j.at("epoch").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    if (!j.at("preprocessing").is_null()) m.preprocessing = preprocess_params_from_json(j.at("preprocessing"));
    m.training = j.at("training");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw IncompatibleCheckpoint(path.string() + ": " + e.what());
  }
}

inline void check_compatible(const CheckpointMeta& m, const std::vector<std::string>& channels) {
  if (m.channels != channels) {
    throw IncompatibleCheckpoint("checkpoint channel order " + nlohmann::json(m.channels).dump() +
                                 " differs from configured " + nlohmann::json(channels).dump());
  }
  if (m.generator.channels != static_cast<int>(channels.size())) {
    throw IncompatibleCheckpoint("checkpoint generator has " + std::to_string(m.generator.channels) + " channels");
  }
}

// Generator weights and metadata from a checkpoint, in evaluation mode.
inline std::pair<Generator, CheckpointMeta> load_generator(const std::filesystem::path& checkpoint) {
  auto meta = read_checkpoint_meta(checkpoint);
  Generator g(meta.generator);
  try {
    torch::serialize::InputArchive archive;
    archive.load_from(checkpoint.string());
    torch::serialize::InputArchive sub;
    archive.read("generator", sub);
    g->load(sub);
  } catch (const c10::Error& e) {
    throw IncompatibleCheckpoint(checkpoint.string() + ": " + e.what_without_backtrace());
  }
  g->eval();
  return {g, meta};
}

// ---------------------------------------------------------------------------
// Trainer

class Trainer {
 public:
  Trainer(TrainConfig config, GeneratorSpec gspec, DiscriminatorSpec dspec)
      : config_(std::move(config)), generator_(gspec), discriminator_(dspec),
        opt_g_(generator_->parameters(), adam_options()), opt_d_(discriminator_->parameters(), adam_options()) {
    config_.validate();
    if (gspec.channels != dspec.channels) throw ConfigError("generator and discriminator channel counts differ");
    if (config_.mode.is_miso() && (*config_.mode.miso_target < 0 || *config_.mode.miso_target >= gspec.channels)) {
      throw ConfigError("MISO target out of range");
    }
    init_weights(*generator_, kInitSigma, derive_seed(config_.seed, 101));
    init_weights(*discriminator_, kInitSigma, derive_seed(config_.seed, 102));
  }

  const TrainConfig& config() const { return config_; }
  Generator& generator() { return generator_; }
  Discriminator& discriminator() { return discriminator_; }
  torch::optim::Adam& optimizer_g() { return opt_g_; }
  torch::optim::Adam& optimizer_d() { return opt_d_; }
  int completed_epochs() const { return completed_epochs_; }
  std::int64_t steps() const { return step_; }
  int channels() const { return generator_->spec().channels; }

  // One generator step then one discriminator step on `batch` ([B,C,H,W]
  // ground truth) under scenario `s`.
  LossRecord train_step(const torch::Tensor& batch, const Scenario& s, std::span<const std::string> patient_ids = {},
                        std::span<const std::size_t> slice_indices = {}) {
    generator_->train();
    discriminator_->train();
    const auto& x_r = batch;
    const auto score_shape = discriminator_->output_shape(x_r.size(0), x_r.size(2), x_r.size(3));

    const auto x_z = impute(x_r, s, config_.imputation);
    const auto g_out = generator_->forward(x_z);
    const auto x_i = replace_present(g_out, x_r, s, config_.implicit_conditioning);
    const auto l_r = real_fake_targets(s, score_shape, x_r.options());
    const auto l_ar = all_real_targets(score_shape, x_r.options());

    const auto g_loss = generator_loss(g_out, x_r, discriminator_->forward(x_i, x_r), l_ar, s, config_.lambda,
                                       config_.implicit_conditioning);
    check_finite(g_loss.total, "generator", s, patient_ids, slice_indices);
    opt_g_.zero_grad();
    g_loss.total.backward();
    opt_g_.step();

    const auto x_i_fixed = x_i.detach();
    const auto d_loss = discriminator_loss(discriminator_->forward(x_r, x_r), discriminator_->forward(x_i_fixed, x_r),
                                           l_r, l_ar, config_.d_loss_scale);
    check_finite(d_loss, "discriminator", s, patient_ids, slice_indices);
    opt_d_.zero_grad();
    d_loss.backward();
    opt_d_.step();

    LossRecord r;
    r.epoch = completed_epochs_;
    r.step = step_++;
    r.scenario = s.str();
    r.tier = difficulty_tier(s);
    r.l1_sel = g_loss.reconstruction.item<double>();
    r.l2_adv = g_loss.adversarial.item<double>();
    r.d_loss = d_loss.item<double>();
    return r;
  }

  void finish_epoch() { ++completed_epochs_; }

  void save_checkpoint(const std::filesystem::path& path, CheckpointMeta meta) {
    meta.generator = generator_->spec();
    meta.discriminator = discriminator_->spec();
    meta.epoch = completed_epochs_;
    meta.seed = config_.seed;
    torch::serialize::OutputArchive archive;
    auto put = [&](const char* key, auto& obj) {
      torch::serialize::OutputArchive sub;
      obj.save(sub);
      archive.write(key, sub);
    };
    put("generator", *generator_);
    put("discriminator", *discriminator_);
    put("optimizer_g", opt_g_);
    put("optimizer_d", opt_d_);
    archive.write("step", torch::tensor(step_, torch::kInt64));
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    archive.save_to(tmp.string());
    std::filesystem::rename(tmp, path);
    const auto meta_path = checkpoint_meta_path(path);
    std::ofstream(meta_path) << to_json(meta).dump(2) << "\n";
  }

  // Restores networks, optimizer state and the epoch counter.
  CheckpointMeta load_checkpoint(const std::filesystem::path& path) {
    auto meta = read_checkpoint_meta(path);
    if (!(meta.generator == generator_->spec()) || !(meta.discriminator == discriminator_->spec())) {
      throw IncompatibleCheckpoint(path.string() + ": network architecture differs from the configured one");
    }
    try {
      torch::serialize::InputArchive archive;
      archive.load_from(path.string());
      auto get = [&](const char* key, auto& obj) {
        torch::serialize::InputArchive sub;
        archive.read(key, sub);
        obj.load(sub);
      };
      get("generator", *generator_);
      get("discriminator", *discriminator_);
      get("optimizer_g", opt_g_);
      get("optimizer_d", opt_d_);
      torch::Tensor step;
      archive.read("step", step);
      step_ = step.item<std::int64_t>();
    } catch (const c10::Error& e) {
      throw IncompatibleCheckpoint(path.string() + ": " + e.what_without_backtrace());
    }
    completed_epochs_ = meta.epoch;
    return meta;
  }

 private:
  torch::optim::AdamOptions adam_options() const {
    return torch::optim::AdamOptions(config_.lr).betas({config_.beta1, config_.beta2});
  }

  void check_finite(const torch::Tensor& loss, const char* which, const Scenario& s,
                    std::span<const std::string> patient_ids, std::span<const std::size_t> slice_indices) const {
    if (std::isfinite(loss.item<double>())) return;
    nlohmann::json prov = nlohmann::json::array();
    for (std::size_t i = 0; i < patient_ids.size(); ++i) {
      prov.push_back({{"patient", patient_ids[i]}, {"slice", i < slice_indices.size() ? slice_indices[i] : 0}});
    }
    const nlohmann::json diag{{"loss", which},   {"epoch", completed_epochs_}, {"step", step_},
                              {"scenario", s.str()}, {"batch", prov}};
    throw NonFiniteLoss(diag.dump());
  }

  TrainConfig config_;
  Generator generator_;
  Discriminator discriminator_;
  torch::optim::Adam opt_g_;
  torch::optim::Adam opt_d_;
  int completed_epochs_ = 0;
  std::int64_t step_ = 0;
};

// ---------------------------------------------------------------------------
// Loss log

inline constexpr const char* kLossLogHeader = "epoch,step,scenario,tier,l1_sel,l2_adv,d_loss,wall_time";

inline std::string format_record(const LossRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d,%lld,%s,%d,%.9g,%.9g,%.9g,%.3f", r.epoch, static_cast<long long>(r.step),
                r.scenario.c_str(), r.tier, r.l1_sel, r.l2_adv, r.d_loss, r.wall_time);
  return buf;
}

// ---------------------------------------------------------------------------
// Epoch loop

// Mean selective L1 of the generator over every valid scenario, evaluation
// mode, zero-gradient.
inline double validation_l1(Generator& g, const torch::Tensor& slices, const TrainConfig& config, int batch = 16) {
  torch::NoGradGuard no_grad;
  g->eval();
  const auto scenarios = enumerate_valid(static_cast<int>(slices.size(1)), config.mode);
  double total = 0.0;
  for (const auto& s : scenarios) {
    const auto missing = s.missing_indices();
    double sum = 0.0;
    for (std::int64_t i = 0; i < slices.size(0); i += batch) {
      const auto x_r = slices.slice(0, i, std::min<std::int64_t>(i + batch, slices.size(0)));
      const auto out = g->forward(impute(x_r, s, config.imputation));
      sum += selective_l1(out, x_r, missing).item<double>() * static_cast<double>(x_r.size(0));
    }
    total += sum / static_cast<double>(slices.size(0));
  }
  return total / static_cast<double>(scenarios.size());
}

struct FitOptions {
  std::filesystem::path output_dir;
  std::vector<std::string> channels;
  std::optional<PreprocessParams> preprocessing;
  const SliceStack* validation = nullptr;
  nlohmann::json extra_meta;  // stored under "training" in checkpoint metadata
  std::function<void(const LossRecord&)> on_record;
  std::function<void(int epoch, const std::vector<LossRecord>&)> on_epoch;
};

struct FitResult {
  std::vector<LossRecord> records;
  std::vector<std::filesystem::path> checkpoints;
  std::filesystem::path final_checkpoint;
  std::optional<std::filesystem::path> best_checkpoint;
};

inline std::filesystem::path epoch_checkpoint_path(const std::filesystem::path& output_dir, int epoch) {
  char name[32];
  std::snprintf(name, sizeof(name), "epoch_%04d.pt", epoch);
  return output_dir / "checkpoints" / name;
}

// Runs epochs [trainer.completed_epochs(), config.epochs). Every per-epoch
// random stream (slice shuffling, scenario draws, dropout / noise) is seeded
// from (seed, epoch), so a resumed run replays exactly what an uninterrupted
// run would have done.
inline FitResult fit(Trainer& trainer, const SliceStack& train, const FitOptions& opts) {
  const auto& config = trainer.config();
  const int channels = trainer.channels();
  if (static_cast<int>(train.channels) != channels) {
    throw ShapeMismatch("training slices have " + std::to_string(train.channels) + " channels, model expects " +
                        std::to_string(channels));
  }
  if (train.count < static_cast<std::size_t>(config.batch_size)) {
    throw ConfigError("fewer training slices (" + std::to_string(train.count) + ") than one batch");
  }
  const auto data = to_tensor(train);
  std::optional<torch::Tensor> val;
  if (opts.validation && opts.validation->count > 0) val = to_tensor(*opts.validation);

  std::filesystem::create_directories(opts.output_dir);
  const auto log_path = opts.output_dir / "train_log.csv";
  // On resume keep only the rows of epochs the checkpoint already covers.
  std::vector<std::string> kept;
  if (trainer.completed_epochs() > 0 && std::filesystem::exists(log_path)) {
    std::ifstream in(log_path);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (!line.empty() && std::stoi(line.substr(0, line.find(','))) < trainer.completed_epochs()) {
        kept.push_back(line);
      }
    }
  }
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw IoError("cannot open " + log_path.string());
  log << kLossLogHeader << "\n";
  for (const auto& line : kept) log << line << "\n";

  CheckpointMeta meta;
  meta.channels = opts.channels;
  meta.preprocessing = opts.preprocessing;
  meta.training = opts.extra_meta;

  FitResult result;
  double best = std::numeric_limits<double>::infinity();
  if (const auto prev = opts.output_dir / "checkpoints" / "best.pt"; trainer.completed_epochs() > 0 && std::filesystem::exists(prev)) {
    best = read_checkpoint_meta(prev).training.value("validation_l1", best);
  }
  const auto start = std::chrono::steady_clock::now();
  const auto n = static_cast<std::int64_t>(train.count);
  const auto batches = n / config.batch_size;

  for (int epoch = trainer.completed_epochs(); epoch < config.epochs; ++epoch) {
    torch::manual_seed(derive_seed(config.seed, static_cast<std::uint64_t>(epoch), 1));
    std::mt19937_64 shuffle_rng(derive_seed(config.seed, static_cast<std::uint64_t>(epoch), 2));
    std::mt19937_64 scenario_rng(derive_seed(config.seed, static_cast<std::uint64_t>(epoch), 3));
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    std::vector<LossRecord> epoch_records;
    for (std::int64_t b = 0; b < batches; ++b) {
      const auto first = order.begin() + b * config.batch_size;
      std::vector<std::int64_t> idx(first, first + config.batch_size);
      std::vector<std::string> ids;
      std::vector<std::size_t> slices;
      for (auto i : idx) {
        ids.push_back(train.patient_ids.empty() ? "" : train.patient_ids[static_cast<std::size_t>(i)]);
        slices.push_back(train.slice_indices.empty() ? 0 : train.slice_indices[static_cast<std::size_t>(i)]);
      }
      const auto batch = data.index_select(0, torch::tensor(idx, torch::kInt64));
      const auto s = sample_scenario(config.schedule, epoch, scenario_rng, channels, config.mode);
      auto record = trainer.train_step(batch, s, ids, slices);
      record.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      log << format_record(record) << "\n";
      if (opts.on_record) opts.on_record(record);
      epoch_records.push_back(record);
    }
    log.flush();
    trainer.finish_epoch();
    if (opts.on_epoch) opts.on_epoch(epoch, epoch_records);
    result.records.insert(result.records.end(), epoch_records.begin(), epoch_records.end());

    const bool last = epoch + 1 == config.epochs;
    if ((epoch + 1) % config.checkpoint_every == 0 || last) {
      const auto path = epoch_checkpoint_path(opts.output_dir, epoch + 1);
      trainer.save_checkpoint(path, meta);
      result.checkpoints.push_back(path);
      if (val) {
        const double score = validation_l1(trainer.generator(), *val, config);
        if (score < best) {
          best = score;
          const auto best_path = opts.output_dir / "checkpoints" / "best.pt";
          auto best_meta = meta;
          best_meta.training["validation_l1"] = score;
          trainer.save_checkpoint(best_path, best_meta);
          result.best_checkpoint = best_path;
        }
      }
    }
  }
  const auto final_path = opts.output_dir / "checkpoints" / "final.pt";
  trainer.save_checkpoint(final_path, meta);
  result.final_checkpoint = final_path;
  return result;
}

}  // namespace mmgan
