#pragma once

// Implementations behind the command-line subcommands. Each returns normally
// on success and throws an mmgan::Error subclass otherwise; exit_code_for
// maps those onto the process exit codes.

#include <torch/torch.h>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmgan/cache.hpp"
#include "mmgan/config.hpp"
#include "mmgan/dataset.hpp"
#include "mmgan/error.hpp"
#include "mmgan/evaluate.hpp"
#include "mmgan/nifti.hpp"
#include "mmgan/phantom.hpp"
#include "mmgan/preprocess.hpp"
#include "mmgan/stats.hpp"
#include "mmgan/trainer.hpp"

namespace mmgan {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitUsage = 2, kExitIo = 3, kExitNumeric = 4, kExitCompat = 5 };

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const InvalidScenario*>(&e)) return kExitUsage;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const CorruptCache*>(&e)) return kExitIo;
  if (dynamic_cast<const NonFiniteLoss*>(&e)) return kExitNumeric;
  if (dynamic_cast<const IncompatibleCheckpoint*>(&e)) return kExitCompat;
  if (dynamic_cast<const std::filesystem::filesystem_error*>(&e)) return kExitIo;
  return kExitFailure;
}

inline bool is_power_of_two(long v) { return v > 0 && (v & (v - 1)) == 0; }

// ---------------------------------------------------------------------------
// phantom-gen

struct PhantomGenOptions {
  int n = 10;
  int size = 64;
  int depth = 16;
  std::uint64_t seed = 0;
  double noise = 0.01;
  std::filesystem::path out;
  std::vector<std::string> channels = default_channel_names();
  std::size_t workers = 1;
};

inline PhantomDataset cmd_phantom_gen(const PhantomGenOptions& o) {
  if (!is_power_of_two(o.size)) throw ConfigError("--size must be a power of two, got " + std::to_string(o.size));
  if (o.noise < 0.0) throw ConfigError("--noise must be >= 0");
  if (o.out.empty()) throw ConfigError("--out is required");
  PhantomSpec spec;
  spec.n_patients = o.n;
  spec.image_size = o.size;
  spec.depth = o.depth;
  spec.noise_sigma = o.noise;
  spec.seed = o.seed;
  if (static_cast<int>(o.channels.size()) != spec.channels()) {
    throw ConfigError("phantom contrast table has " + std::to_string(spec.channels()) + " sequences");
  }
  auto d = generate_phantom_dataset(spec, o.workers);
  write_phantom_dataset(o.out, d, o.channels);
  return d;
}

// ---------------------------------------------------------------------------
// Dataset loading shared by preprocess / train / evaluate

inline bool has_cache(const std::filesystem::path& dir) {
  return std::filesystem::is_directory(dir) && !list_cached_patients(dir).empty();
}

// Cached slices when present, otherwise preprocess the raw tree and cache it.
inline PreparedDataset load_or_prepare(const RunConfig& cfg, std::size_t workers = 1,
                                       std::optional<BoundingBox3D> fixed_box = std::nullopt) {
  const auto cache = cfg.cache_dir();
  if (has_cache(cache)) {
    auto d = read_prepared(cache, cfg.dataset.channels);
    if (d.params.height != cfg.preprocessing.size || d.params.width != cfg.preprocessing.size) {
      throw CorruptCache("cache in " + cache.string() + " was built at " + std::to_string(d.params.height) +
                         " pixels, config asks for " + std::to_string(cfg.preprocessing.size));
    }
    return d;
  }
  if (cfg.dataset.root.empty()) {
    throw ConfigError("no cached slices in " + cache.string() + " and dataset.root is not set");
  }
  auto raw = load_raw_dataset(cfg.dataset.root, cfg.dataset.channels, workers);
  auto d = prepare_volume_sets(std::move(raw), cfg.dataset.channels, cfg.preprocessing.size,
                               cfg.preprocessing.threshold, workers, fixed_box);
  write_prepared(cache, d);
  return d;
}

inline PreparedDataset cmd_preprocess(const RunConfig& cfg, std::size_t workers = 1) {
  if (cfg.dataset.root.empty()) throw ConfigError("dataset.root is required for preprocess");
  auto raw = load_raw_dataset(cfg.dataset.root, cfg.dataset.channels, workers);
  auto d = prepare_volume_sets(std::move(raw), cfg.dataset.channels, cfg.preprocessing.size,
                               cfg.preprocessing.threshold, workers);
  write_prepared(cfg.cache_dir(), d);
  write_resolved_config(cfg.cache_dir(), cfg);
  return d;
}

// ---------------------------------------------------------------------------
// train

struct TrainCommandOptions {
  std::optional<std::filesystem::path> resume;
  std::size_t workers = 1;
  bool quiet = false;
};

inline FitResult cmd_train(const RunConfig& cfg, const TrainCommandOptions& o = {}) {
  cfg.validate();
  auto data = load_or_prepare(cfg, o.workers);
  const auto split = split_dataset(data.patients.size(), cfg.dataset.n_test, cfg.dataset.n_val);
  const auto train = data.gather(split.train);
  const auto val = data.gather(split.validation);

  write_resolved_config(cfg.output_dir, cfg);
  nlohmann::json split_json;
  for (const auto& [name, idx] : {std::pair{"train", &split.train}, {"validation", &split.validation}, {"test", &split.test}}) {
    split_json[name] = nlohmann::json::array();
    for (auto i : *idx) split_json[name].push_back(data.patients[i].meta.patient_id);
  }
  std::ofstream(cfg.output_dir / "split.json") << split_json.dump(2) << "\n";

  Trainer trainer(cfg.training, cfg.generator, cfg.discriminator);
  if (o.resume) {
    const auto meta = trainer.load_checkpoint(*o.resume);
    check_compatible(meta, cfg.dataset.channels);
    if (meta.preprocessing && !(*meta.preprocessing == data.params)) {
      throw IncompatibleCheckpoint("checkpoint was trained on differently preprocessed data");
    }
  }
  FitOptions fo;
  fo.output_dir = cfg.output_dir;
  fo.channels = cfg.dataset.channels;
  fo.preprocessing = data.params;
  fo.validation = val.count > 0 ? &val : nullptr;
  fo.extra_meta = to_json(cfg.training, cfg.dataset.channels);
  if (!o.quiet) {
    fo.on_epoch = [&](int epoch, const std::vector<LossRecord>& recs) {
      double l1 = 0, adv = 0, d = 0;
      for (const auto& r : recs) {
        l1 += r.l1_sel;
        adv += r.l2_adv;
        d += r.d_loss;
      }
      const double n = recs.empty() ? 1.0 : static_cast<double>(recs.size());
      char buf[160];
      std::snprintf(buf, sizeof(buf), "epoch %3d  l1_sel %.5f  l2_adv %.5f  d_loss %.5f", epoch + 1, l1 / n, adv / n,
                    d / n);
      std::cout << buf << std::endl;
    };
  }
  try {
    return fit(trainer, train, fo);
  } catch (const NonFiniteLoss& e) {
    const auto dump = cfg.output_dir / "nonfinite_dump.json";
    std::string what = e.what();
    const auto brace = what.find('{');
    std::ofstream(dump) << (brace == std::string::npos ? what : what.substr(brace)) << "\n";
    throw NonFiniteLoss("diagnostic dump written to " + dump.string());
  }
}

// ---------------------------------------------------------------------------
// synthesize

struct SynthesizeOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path scan;
  std::string scenario;
  std::filesystem::path out;
};

struct SynthesisResult {
  std::vector<std::filesystem::path> written;
  double seconds = 0.0;
};

// Missing sequences are written in mean-normalized intensity units: the
// divisor of a sequence that was never acquired is unknown.
inline SynthesisResult cmd_synthesize(const SynthesizeOptions& o) {
  auto [g, meta] = load_generator(o.checkpoint);
  const int c = static_cast<int>(meta.channels.size());
  const auto s = parse_scenario(o.scenario, c);
  if (!meta.preprocessing) throw IncompatibleCheckpoint("checkpoint carries no preprocessing parameters");
  const auto& pp = *meta.preprocessing;

  VolumeSet vs;
  vs.patient_id = o.scan.filename().string();
  std::array<std::size_t, 3> shape{};
  for (int k : s.present_indices()) {
    const auto path = sequence_path(o.scan, meta.channels[static_cast<std::size_t>(k)]);
    if (!std::filesystem::exists(path)) throw IoError("present sequence file not found: " + path.string());
  }
  std::vector<VolumeF> seqs(static_cast<std::size_t>(c));
  bool first = true;
  for (int k : s.present_indices()) {
    auto img = nifti::read(sequence_path(o.scan, meta.channels[static_cast<std::size_t>(k)]));
    if (first) {
      shape = img.volume.shape;
      vs.spacing = img.spacing;
      first = false;
    } else if (img.volume.shape != shape) {
      throw ShapeMismatch("sequence " + meta.channels[static_cast<std::size_t>(k)] + " has shape " +
                          shape_string(img.volume.shape) + ", expected " + shape_string(shape));
    }
    normalize_by_mean(img.volume, meta.channels[static_cast<std::size_t>(k)]);
    seqs[static_cast<std::size_t>(k)] = std::move(img.volume);
  }
  for (int k : s.missing_indices()) seqs[static_cast<std::size_t>(k)] = VolumeF(shape[0], shape[1], shape[2]);
  vs.sequences = std::move(seqs);
  if (!pp.box.fits(shape)) {
    throw IncompatibleCheckpoint("scan shape " + shape_string(shape) + " does not contain the training bounding box");
  }

  const auto t0 = std::chrono::steady_clock::now();
  const auto slices = crop_and_resize(vs, pp.box, pp.height, pp.width);
  const auto imputation = parse_imputation(meta.training.value("imputation", std::string("zeros")));
  auto predict = generator_predictor(g, imputation);
  const auto out = predict(to_tensor(slices), s).contiguous();
  SliceStack synth = slices;
  std::memcpy(synth.data.data(), out.data_ptr<float>(), synth.data.size() * sizeof(float));
  std::vector<VolumeF> volumes;
  for (int k : s.missing_indices()) volumes.push_back(uncrop(synth.channel_volume(static_cast<std::size_t>(k)), pp.box, shape));
  SynthesisResult r;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::filesystem::create_directories(o.out);
  std::size_t i = 0;
  for (int k : s.missing_indices()) {
    const auto path = o.out / (meta.channels[static_cast<std::size_t>(k)] + ".nii.gz");
    nifti::write(path, volumes[i++], vs.spacing);
    r.written.push_back(path);
  }
  const nlohmann::json info{{"scenario", s.str()},
                            {"checkpoint", o.checkpoint.string()},
                            {"scan", o.scan.string()},
                            {"written", [&] {
                               std::vector<std::string> w;
                               for (const auto& p : r.written) w.push_back(p.string());
                               return w;
                             }()},
                            {"intensity_units", "mean-normalized"},
                            {"seconds", r.seconds}};
  std::ofstream(o.out / "synthesis.json") << info.dump(2) << "\n";
  return r;
}

// ---------------------------------------------------------------------------
// evaluate

enum class StatsKind { None, Planes, Wilcoxon };

inline StatsKind parse_stats_kind(const std::string& s) {
  if (s.empty() || s == "none") return StatsKind::None;
  if (s == "planes") return StatsKind::Planes;
  if (s == "wilcoxon") return StatsKind::Wilcoxon;
  throw ConfigError("--stats must be 'planes' or 'wilcoxon', got '" + s + "'");
}

struct EvaluateOptions {
  std::filesystem::path checkpoint;
  std::vector<std::string> scenarios;  // overrides the config when nonempty
  StatsKind stats = StatsKind::None;
  std::optional<std::filesystem::path> baseline;
  std::filesystem::path out;
  std::size_t workers = 1;
};

struct EvaluateResult {
  MetricsReport report;
  std::filesystem::path csv;
  std::filesystem::path json;
};

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto end = s.find(',', start);
    auto item = s.substr(start, end == std::string::npos ? std::string::npos : end - start);
    if (!item.empty()) out.push_back(item);
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return out;
}

inline std::vector<CachedPatient> test_patients(const PreparedDataset& d, const RunConfig& cfg) {
  std::vector<CachedPatient> out;
  if (cfg.dataset.n_test == 0) return d.patients;
  const auto split = split_dataset(d.patients.size(), cfg.dataset.n_test, cfg.dataset.n_val);
  for (auto i : split.test) out.push_back(d.patients[i]);
  return out;
}

inline EvaluateResult cmd_evaluate(RunConfig cfg, const EvaluateOptions& o) {
  if (!o.scenarios.empty()) cfg.evaluation.scenarios = o.scenarios;
  cfg.validate();
  if (o.stats == StatsKind::Wilcoxon && !o.baseline) throw ConfigError("--stats wilcoxon needs --baseline");

  auto [g, meta] = load_generator(o.checkpoint);
  check_compatible(meta, cfg.dataset.channels);
  auto data = load_or_prepare(cfg, o.workers, meta.preprocessing ? std::optional(meta.preprocessing->box) : std::nullopt);
  if (meta.preprocessing && !(*meta.preprocessing == data.params)) {
    throw IncompatibleCheckpoint("checkpoint preprocessing differs from the dataset cache in " + cfg.cache_dir().string());
  }
  const auto patients = test_patients(data, cfg);
  const auto scenarios = cfg.eval_scenarios();
  EvalOptions eo;
  eo.renormalize = cfg.evaluation.renormalize;
  eo.i_max = cfg.evaluation.i_max;
  eo.only_channel = cfg.training.mode.miso_target;

  EvaluateResult r;
  r.report = evaluate_model(generator_predictor(g, cfg.training.imputation), patients, scenarios, cfg.dataset.channels, eo);
  std::filesystem::create_directories(o.out);
  write_resolved_config(o.out, cfg);
  r.csv = o.out / "report.csv";
  r.json = o.out / "report.json";
  write_report_csv(r.csv, r.report);
  auto summary = to_json(r.report);
  summary["checkpoint"] = o.checkpoint.string();

  if (o.stats == StatsKind::Planes) {
    std::ofstream csv(o.out / "planes.csv");
    csv << "scenario,patient,sequence,p_axial_coronal,p_axial_sagittal,note\n";
    nlohmann::json planes = nlohmann::json::array();
    auto predict = generator_predictor(g, cfg.training.imputation);
    for (const auto& s : scenarios) {
      for (const auto& p : patients) {
        const auto out = predict(to_tensor(p.slices), s).contiguous();
        SliceStack synth = p.slices;
        std::memcpy(synth.data.data(), out.data_ptr<float>(), synth.data.size() * sizeof(float));
        for (int k : s.missing_indices()) {
          if (eo.only_channel && k != *eo.only_channel) continue;
          const auto a = per_plane_error_analysis(synth.channel_volume(static_cast<std::size_t>(k)),
                                                  p.slices.channel_volume(static_cast<std::size_t>(k)));
          const auto p_of = [](const PlaneComparison& c) {
            return c.result ? nlohmann::json(c.result->p_value) : nlohmann::json(nullptr);
          };
          const auto note = a.axial_vs_coronal.degenerate.empty() ? a.axial_vs_sagittal.degenerate : a.axial_vs_coronal.degenerate;
          const auto& seq = cfg.dataset.channels[static_cast<std::size_t>(k)];
          planes.push_back({{"scenario", s.str()},
                            {"patient", p.meta.patient_id},
                            {"sequence", seq},
                            {"p_axial_coronal", p_of(a.axial_vs_coronal)},
                            {"p_axial_sagittal", p_of(a.axial_vs_sagittal)},
                            {"degenerate", note}});
          const auto fmt = [](const PlaneComparison& c) {
            if (!c.result) return std::string();
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.9g", c.result->p_value);
            return std::string(buf);
          };
          csv << s.str() << "," << p.meta.patient_id << "," << seq << "," << fmt(a.axial_vs_coronal) << ","
              << fmt(a.axial_vs_sagittal) << "," << (note.empty() ? "" : "degenerate") << "\n";
        }
      }
    }
    summary["planes"] = planes;
  } else if (o.stats == StatsKind::Wilcoxon) {
    auto [bg, bmeta] = load_generator(*o.baseline);
    check_compatible(bmeta, cfg.dataset.channels);
    const auto base = evaluate_model(generator_predictor(bg, cfg.training.imputation), patients, scenarios,
                                     cfg.dataset.channels, eo);
    nlohmann::json comps = nlohmann::json::array();
    std::ofstream csv(o.out / "wilcoxon.csv");
    csv << "scenario,metric,statistic,p_value,n,note\n";
    for (const auto& metric : {"mse", "psnr", "ssim"}) {
      for (const auto& c : compare_reports(r.report, base, metric)) {
        comps.push_back({{"scenario", c.scenario},
                         {"metric", c.metric},
                         {"result", c.result ? to_json(*c.result) : nlohmann::json(nullptr)},
                         {"degenerate", c.degenerate}});
        char buf[96] = "";
        if (c.result) std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%zu", c.result->statistic, c.result->p_value, c.result->n1);
        csv << c.scenario << "," << c.metric << "," << (c.result ? buf : ",,") << ","
            << (c.degenerate.empty() ? "" : "degenerate") << "\n";
      }
    }
    summary["baseline"] = o.baseline->string();
    summary["wilcoxon"] = comps;
  }
  std::ofstream(r.json) << summary.dump(2) << "\n";
  return r;
}

}  // namespace mmgan
