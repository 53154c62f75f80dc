#include <gtest/gtest.h>

#include <torch/torch.h>

#include <fstream>
#include <map>

#include "mmgan/dataset.hpp"
#include "mmgan/phantom.hpp"
#include "mmgan/scenario.hpp"
#include "mmgan/trainer.hpp"
#include "test_util.hpp"

using namespace mmgan;

namespace {

GeneratorSpec small_g() {
  GeneratorSpec g;
  g.depth = 5;
  g.widths = {16, 32, 64, 64, 64};
  return g;
}

DiscriminatorSpec small_d() { return {4, 3, {16, 32, 64}, 0.0}; }

const SliceStack& phantom_slices() {
  static const SliceStack slices = [] {
    PhantomSpec spec;
    spec.n_patients = 4;
    spec.image_size = 32;
    spec.depth = 8;
    spec.seed = 17;
    auto d = generate_phantom_dataset(spec);
    const auto prepared = prepare_volume_sets(d.patients, default_channel_names(), 32, 0.0);
    return prepared.gather({0, 1, 2, 3});
  }();
  return slices;
}

TrainConfig quick_config(int epochs, std::uint64_t seed = 1) {
  TrainConfig c;
  c.epochs = epochs;
  c.schedule.total_epochs = epochs;
  c.seed = seed;
  c.checkpoint_every = 2;
  return c;
}

FitOptions options(const std::filesystem::path& dir) {
  FitOptions o;
  o.output_dir = dir;
  o.channels = default_channel_names();
  return o;
}

// Log without the wall-clock column.
std::vector<std::string> log_without_time(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> rows;
  std::string line;
  while (std::getline(in, line)) rows.push_back(line.substr(0, line.rfind(',')));
  return rows;
}

torch::Tensor flat_parameters(torch::nn::Module& m) {
  std::vector<torch::Tensor> parts;
  for (const auto& p : m.parameters()) parts.push_back(p.detach().flatten());
  for (const auto& b : m.buffers()) parts.push_back(b.detach().flatten().to(torch::kFloat));
  return torch::cat(parts);
}

}  // namespace

TEST(Seeds, DeriveSeedSeparatesStreams) {
  EXPECT_EQ(derive_seed(1, 2, 3), derive_seed(1, 2, 3));
  EXPECT_NE(derive_seed(1, 2, 3), derive_seed(1, 3, 2));
  EXPECT_NE(derive_seed(1, 2, 3), derive_seed(2, 2, 3));
}

TEST(TrainStep, RecordsScenarioAndFiniteLosses) {
  torch::manual_seed(0);
  Trainer t(quick_config(1), small_g(), small_d());
  const auto batch = to_tensor(phantom_slices()).narrow(0, 0, 4);
  const auto s = parse_scenario("0101", 4);
  const auto r = t.train_step(batch, s);
  EXPECT_EQ(r.scenario, "0101");
  EXPECT_EQ(r.tier, 2);
  EXPECT_EQ(r.step, 0);
  EXPECT_GT(r.l1_sel, 0.0);
  EXPECT_GE(r.l2_adv, 0.0);
  EXPECT_GE(r.d_loss, 0.0);
  EXPECT_EQ(t.steps(), 1);
}

TEST(TrainStep, UpdatesGeneratorThenDiscriminator) {
  torch::manual_seed(0);
  Trainer t(quick_config(1), small_g(), small_d());
  const auto g0 = flat_parameters(*t.generator()).clone();
  const auto d0 = flat_parameters(*t.discriminator()).clone();
  t.train_step(to_tensor(phantom_slices()).narrow(0, 0, 4), parse_scenario("0011", 4));
  EXPECT_FALSE(torch::equal(g0, flat_parameters(*t.generator())));
  EXPECT_FALSE(torch::equal(d0, flat_parameters(*t.discriminator())));
}

TEST(TrainStep, NonFiniteLossCarriesProvenance) {
  torch::manual_seed(0);
  Trainer t(quick_config(1), small_g(), small_d());
  auto batch = to_tensor(phantom_slices()).narrow(0, 0, 4).clone();
  batch.index_put_({1, 0, 3, 3}, std::numeric_limits<float>::quiet_NaN());
  const std::vector<std::string> ids{"p0", "p1", "p2", "p3"};
  const std::vector<std::size_t> slices{0, 1, 2, 3};
  try {
    t.train_step(batch, parse_scenario("0111", 4), ids, slices);
    FAIL() << "expected NonFiniteLoss";
  } catch (const NonFiniteLoss& e) {
    const std::string what = e.what();
    const auto diag = nlohmann::json::parse(what.substr(what.find('{')));
    EXPECT_EQ(diag["scenario"], "0111");
    EXPECT_EQ(diag["batch"][1]["patient"], "p1");
    EXPECT_EQ(diag["loss"], "generator");
  }
}

TEST(Fit, SameSeedSameTrajectoryAndWeights) {
  TempDir a, b;
  torch::manual_seed(123);
  Trainer ta(quick_config(2, 5), small_g(), small_d());
  const auto ra = fit(ta, phantom_slices(), options(a.path()));
  torch::manual_seed(999);  // global state before construction must not matter
  Trainer tb(quick_config(2, 5), small_g(), small_d());
  const auto rb = fit(tb, phantom_slices(), options(b.path()));
  ASSERT_EQ(ra.records.size(), rb.records.size());
  for (std::size_t i = 0; i < ra.records.size(); ++i) {
    EXPECT_EQ(ra.records[i].scenario, rb.records[i].scenario);
    EXPECT_EQ(ra.records[i].l1_sel, rb.records[i].l1_sel);
    EXPECT_EQ(ra.records[i].d_loss, rb.records[i].d_loss);
  }
  EXPECT_EQ(log_without_time(a / "train_log.csv"), log_without_time(b / "train_log.csv"));
  EXPECT_TRUE(torch::equal(flat_parameters(*ta.generator()), flat_parameters(*tb.generator())));

  Trainer tc(quick_config(2, 6), small_g(), small_d());
  TempDir c;
  const auto rc = fit(tc, phantom_slices(), options(c.path()));
  EXPECT_NE(ra.records.back().l1_sel, rc.records.back().l1_sel);
}

TEST(Fit, FiveEpochSmokeReducesReconstructionError) {
  TempDir dir;
  Trainer t(quick_config(5, 3), small_g(), small_d());
  std::map<int, std::pair<double, int>> per_epoch;
  auto o = options(dir.path());
  o.on_record = [&](const LossRecord& r) {
    per_epoch[r.epoch].first += r.l1_sel;
    ++per_epoch[r.epoch].second;
  };
  const auto r = fit(t, phantom_slices(), o);
  EXPECT_EQ(r.records.size(), 5u * (phantom_slices().count / 4));
  const double first = per_epoch[0].first / per_epoch[0].second;
  const double last = per_epoch[4].first / per_epoch[4].second;
  EXPECT_LT(last, first);
  for (const auto& rec : r.records) EXPECT_EQ(rec.tier, 1);  // first curriculum window
}

TEST(Fit, WritesLogAndCheckpointSeries) {
  TempDir dir;
  Trainer t(quick_config(3, 2), small_g(), small_d());
  const auto r = fit(t, phantom_slices(), options(dir.path()));
  ASSERT_EQ(r.checkpoints.size(), 2u);  // every 2 epochs, plus the last
  EXPECT_EQ(r.checkpoints[0].filename(), "epoch_0002.pt");
  EXPECT_EQ(r.checkpoints[1].filename(), "epoch_0003.pt");
  EXPECT_TRUE(std::filesystem::exists(r.final_checkpoint));
  EXPECT_FALSE(r.best_checkpoint.has_value());
  const auto meta = read_checkpoint_meta(r.final_checkpoint);
  EXPECT_EQ(meta.epoch, 3);
  EXPECT_EQ(meta.generator, small_g());
  EXPECT_EQ(meta.channels, default_channel_names());

  const auto rows = log_without_time(dir / "train_log.csv");
  EXPECT_EQ(rows.front(), "epoch,step,scenario,tier,l1_sel,l2_adv,d_loss");
  EXPECT_EQ(rows.size(), r.records.size() + 1);
  for (const auto& rec : r.records) {
    EXPECT_TRUE(std::isfinite(rec.l1_sel));
    EXPECT_GE(rec.wall_time, 0.0);
  }
}

TEST(Fit, ValidationKeepsBestCheckpoint) {
  TempDir dir;
  Trainer t(quick_config(2, 2), small_g(), small_d());
  auto o = options(dir.path());
  const auto& all = phantom_slices();
  o.validation = &all;
  const auto r = fit(t, all, o);
  ASSERT_TRUE(r.best_checkpoint.has_value());
  EXPECT_TRUE(read_checkpoint_meta(*r.best_checkpoint).training.contains("validation_l1"));
}

TEST(Fit, ResumeMatchesUninterruptedRun) {
  TempDir full, part;
  Trainer straight(quick_config(4, 8), small_g(), small_d());
  const auto rs = fit(straight, phantom_slices(), options(full.path()));

  {
    auto c = quick_config(4, 8);
    c.epochs = 2;
    c.schedule.total_epochs = 2;
    Trainer first(c, small_g(), small_d());
    fit(first, phantom_slices(), options(part.path()));
  }
  Trainer resumed(quick_config(4, 8), small_g(), small_d());
  const auto meta = resumed.load_checkpoint(part / "checkpoints" / "epoch_0002.pt");
  EXPECT_EQ(meta.epoch, 2);
  EXPECT_EQ(resumed.completed_epochs(), 2);
  fit(resumed, phantom_slices(), options(part.path()));

  EXPECT_EQ(log_without_time(full / "train_log.csv"), log_without_time(part / "train_log.csv"));
  EXPECT_TRUE(torch::equal(flat_parameters(*straight.generator()), flat_parameters(*resumed.generator())));
  EXPECT_TRUE(torch::equal(flat_parameters(*straight.discriminator()), flat_parameters(*resumed.discriminator())));
  EXPECT_EQ(straight.steps(), resumed.steps());
  (void)rs;
}

TEST(Checkpoint, LoaderRefusesMismatchedSpecs) {
  TempDir dir;
  Trainer t(quick_config(1), small_g(), small_d());
  const auto path = dir / "c.pt";
  CheckpointMeta m;
  m.channels = default_channel_names();
  t.save_checkpoint(path, m);

  auto other = small_g();
  other.widths.back() = 32;
  Trainer u(quick_config(1), other, small_d());
  EXPECT_THROW(u.load_checkpoint(path), IncompatibleCheckpoint);
  EXPECT_THROW(check_compatible(read_checkpoint_meta(path), {"T1", "T2", "T1c"}), IncompatibleCheckpoint);
  EXPECT_THROW(read_checkpoint_meta(dir / "missing.pt"), IoError);

  auto [g, meta] = load_generator(path);
  EXPECT_FALSE(g->is_training());
  EXPECT_TRUE(torch::equal(conv_weights(*g), conv_weights(*t.generator())));
}

TEST(Config, MisoDefaultsAndLambdaRange) {
  const auto m = TrainConfig::miso_defaults(3);
  EXPECT_EQ(m.epochs, 30);
  EXPECT_EQ(m.batch_size, 2);
  EXPECT_EQ(m.schedule.mode, SamplingMode::Random);
  ASSERT_TRUE(m.mode.is_miso());
  EXPECT_EQ(*m.mode.miso_target, 3);
  const auto d = TrainConfig::mimo_defaults();
  EXPECT_EQ(d.epochs, 60);
  EXPECT_EQ(d.batch_size, 4);
  EXPECT_EQ(d.schedule.mode, SamplingMode::Curriculum);
  EXPECT_DOUBLE_EQ(d.lambda, 0.9);
  EXPECT_DOUBLE_EQ(d.lr, 2e-4);
  EXPECT_DOUBLE_EQ(d.beta1, 0.5);
  auto c = d;
  c.lambda = 1.0;
  EXPECT_NO_THROW(c.validate());
  c.lambda = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = d;
  c.epochs = 10;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Fit, MisoTrainsOnlyScenariosMissingTheTarget) {
  TempDir dir;
  auto c = TrainConfig::miso_defaults(3);
  c.epochs = 1;
  c.schedule.total_epochs = 1;
  Trainer t(c, small_g(), DiscriminatorSpec{4, 2, {16, 32}, 0.05});
  const auto r = fit(t, phantom_slices(), options(dir.path()));
  for (const auto& rec : r.records) EXPECT_EQ(rec.scenario.back(), '0') << rec.scenario;
}
