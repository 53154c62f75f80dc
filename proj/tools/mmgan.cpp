// mmgan: phantom-gen | preprocess | train | synthesize | evaluate

#include <torch/torch.h>

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mmgan/commands.hpp"

namespace {

struct Overrides {
  std::optional<int> epochs;
  std::optional<int> batch_size;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
  std::optional<std::string> sampling;
  std::optional<double> lambda;
  std::optional<std::string> imputation;
  std::optional<std::string> root;
  std::optional<std::string> cache_dir;
  bool no_ic = false;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--epochs", o.epochs, "Training epochs");
  cmd->add_option("--batch-size", o.batch_size, "Slices per batch");
  cmd->add_option("--seed", o.seed, "Random seed");
  cmd->add_option("--output-dir", o.output_dir, "Output directory");
  cmd->add_option("--sampling", o.sampling, "Scenario sampling: CL or RS");
  cmd->add_option("--lambda", o.lambda, "Reconstruction weight in (0, 1]");
  cmd->add_option("--imputation", o.imputation, "zeros, noise or average");
  cmd->add_option("--root", o.root, "Raw dataset root");
  cmd->add_option("--cache-dir", o.cache_dir, "Preprocessed slice cache");
  cmd->add_flag("--no-ic", o.no_ic, "Disable implicit conditioning (ablation)");
}

// Flags win over the config file.
mmgan::RunConfig resolve(const std::string& path, const Overrides& o) {
  auto j = nlohmann::json::object();
  if (!path.empty()) {
    if (!std::filesystem::exists(path)) throw mmgan::ConfigError("config file not found: " + path);
    std::ifstream in(path);
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw mmgan::ConfigError(path + ": " + e.what());
    }
  }
  if (o.epochs) j["training"]["epochs"] = *o.epochs;
  if (o.batch_size) j["training"]["batch_size"] = *o.batch_size;
  if (o.seed) j["seed"] = *o.seed;
  if (o.output_dir) j["output_dir"] = *o.output_dir;
  if (o.sampling) j["training"]["curriculum"]["mode"] = *o.sampling;
  if (o.lambda) j["training"]["lambda"] = *o.lambda;
  if (o.imputation) j["training"]["imputation"] = *o.imputation;
  if (o.root) j["dataset"]["root"] = *o.root;
  if (o.cache_dir) j["dataset"]["cache_dir"] = *o.cache_dir;
  if (o.no_ic) j["training"]["implicit_conditioning"] = false;
  return mmgan::parse_run_config(j);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-input multi-output GAN for missing MRI sequence synthesis"};
  app.require_subcommand(1);
  std::size_t workers = 1;
  int threads = 1;
  app.add_option("--workers", workers, "Concurrent data-loading workers")->check(CLI::PositiveNumber);
  app.add_option("--threads", threads, "Torch intra-op threads")->check(CLI::PositiveNumber);

  mmgan::PhantomGenOptions pg;
  std::string channels_csv = "T1,T2,T1c,T2flair";
  auto* phantom = app.add_subcommand("phantom-gen", "Write a synthetic multi-contrast phantom dataset");
  phantom->add_option("--n", pg.n, "Number of patients")->check(CLI::PositiveNumber);
  phantom->add_option("--size", pg.size, "In-plane size (power of two)");
  phantom->add_option("--depth", pg.depth, "Axial slices per volume");
  phantom->add_option("--seed", pg.seed, "Random seed");
  phantom->add_option("--noise", pg.noise, "Gaussian noise sigma on brain voxels");
  phantom->add_option("--channels", channels_csv, "Sequence names, comma separated");
  phantom->add_option("--out", pg.out, "Output directory")->required();

  std::string config_path;
  Overrides ov;
  auto* prep = app.add_subcommand("preprocess", "Normalize, crop and resize a raw dataset into the slice cache");
  prep->add_option("--config", config_path, "Run configuration JSON");
  add_overrides(prep, ov);

  std::optional<std::string> resume;
  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", config_path, "Run configuration JSON")->required();
  train->add_option("--resume", resume, "Checkpoint to resume from");
  add_overrides(train, ov);

  mmgan::SynthesizeOptions so;
  auto* synth = app.add_subcommand("synthesize", "Synthesize the missing sequences of one scan");
  synth->add_option("--checkpoint", so.checkpoint, "Model checkpoint (.pt)")->required();
  synth->add_option("--scan", so.scan, "Directory with the present sequences")->required();
  synth->add_option("--scenario", so.scenario, "Presence bits, e.g. 1010")->required();
  synth->add_option("--out", so.out, "Output directory")->required();

  mmgan::EvaluateOptions eo;
  std::string scenarios_csv, stats;
  std::optional<std::string> baseline;
  auto* eval = app.add_subcommand("evaluate", "Score a checkpoint on the test split");
  eval->add_option("--checkpoint", eo.checkpoint, "Model checkpoint (.pt)")->required();
  eval->add_option("--config", config_path, "Run configuration JSON")->required();
  eval->add_option("--scenarios", scenarios_csv, "Comma-separated scenario strings");
  eval->add_option("--stats", stats, "planes or wilcoxon");
  eval->add_option("--baseline", baseline, "Baseline checkpoint for --stats wilcoxon");
  eval->add_option("--out", eo.out, "Output directory")->required();
  add_overrides(eval, ov);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? mmgan::kExitOk : mmgan::kExitUsage;
  }

  torch::set_num_threads(threads);
  try {
    if (*phantom) {
      pg.workers = workers;
      pg.channels = mmgan::split_list(channels_csv);
      const auto d = mmgan::cmd_phantom_gen(pg);
      std::cout << "wrote " << d.patients.size() << " phantom patients to " << pg.out << "\n";
    } else if (*prep) {
      const auto cfg = resolve(config_path, ov);
      const auto d = mmgan::cmd_preprocess(cfg, workers);
      std::cout << "cached " << d.patients.size() << " patients in " << cfg.cache_dir() << "\n";
    } else if (*train) {
      const auto cfg = resolve(config_path, ov);
      mmgan::TrainCommandOptions to;
      to.workers = workers;
      if (resume) to.resume = *resume;
      const auto r = mmgan::cmd_train(cfg, to);
      std::cout << "final checkpoint " << r.final_checkpoint << "\n";
    } else if (*synth) {
      const auto r = mmgan::cmd_synthesize(so);
      for (const auto& p : r.written) std::cout << "wrote " << p << "\n";
      std::cout << "synthesis took " << r.seconds << " s\n";
    } else if (*eval) {
      const auto cfg = resolve(config_path, ov);
      eo.scenarios = mmgan::split_list(scenarios_csv);
      eo.stats = mmgan::parse_stats_kind(stats);
      if (baseline) eo.baseline = *baseline;
      eo.workers = workers;
      const auto r = mmgan::cmd_evaluate(cfg, eo);
      for (const auto& t : r.report.tiers) {
        std::printf("tier %d  ssim %.4f +- %.4f  psnr %.2f  mse %.5f\n", t.tier, t.summary.mean.ssim,
                    t.summary.std.ssim, t.summary.mean.psnr, t.summary.mean.mse);
      }
      std::printf("grand  ssim %.4f  psnr %.2f  mse %.5f\n", r.report.grand.mean.ssim, r.report.grand.mean.psnr,
                  r.report.grand.mean.mse);
      std::cout << "report " << r.csv << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return mmgan::exit_code_for(e);
  }
  return mmgan::kExitOk;
}
