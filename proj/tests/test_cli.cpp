#include <gtest/gtest.h>

#include <sys/wait.h>

#include <fstream>
#include <sstream>

#include "mmgan/nifti.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(MMGAN_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::string> lines(const fs::path& p) {
  std::vector<std::string> out;
  std::istringstream in(slurp(p));
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

// Tiny phantom plus a one-epoch model shared by every test in the suite.
class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("mmgan_cli");
    const auto& d = dir_->path();
    ASSERT_EQ(run("phantom-gen --n 4 --size 32 --depth 8 --seed 3 --out " + (d / "data").string(), d / "gen.log"), 0);
    nlohmann::json cfg = {
        {"dataset", {{"root", (d / "data").string()}, {"n_test", 1}}},
        {"preprocessing", {{"size", 32}}},
        {"generator", {{"depth", 5}, {"widths", {8, 16, 16, 16, 16}}}},
        {"discriminator", {{"n_blocks", 2}, {"widths", {8, 16}}}},
        {"training", {{"epochs", 1}, {"batch_size", 4}}},
        {"seed", 5},
        {"output_dir", (d / "run").string()}};
    std::ofstream(d / "cfg.json") << cfg.dump(2);
    ASSERT_EQ(run("train --config " + (d / "cfg.json").string(), d / "train.log"), 0) << slurp(d / "train.log");
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }

  static fs::path root() { return dir_->path(); }
  static std::string config() { return (root() / "cfg.json").string(); }
  static std::string checkpoint() { return (root() / "run" / "checkpoints" / "final.pt").string(); }

  static TempDir* dir_;
};

TempDir* Cli::dir_ = nullptr;

}  // namespace

TEST_F(Cli, PhantomGenIsByteDeterministic) {
  TempDir d;
  ASSERT_EQ(run("phantom-gen --n 2 --size 32 --depth 8 --seed 3 --out " + (d / "a").string(), d / "log"), 0);
  ASSERT_EQ(run("phantom-gen --n 2 --size 32 --depth 8 --seed 3 --out " + (d / "b").string(), d / "log"), 0);
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(d / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), d / "a");
    EXPECT_EQ(slurp(e.path()), slurp(d / "b" / rel)) << rel;
    ++files;
  }
  EXPECT_GE(files, 2 * 4);
  for (const char* seq : {"T1", "T2", "T1c", "T2flair"}) EXPECT_TRUE(fs::exists(d / "a" / "phantom_000" / (std::string(seq) + ".nii.gz")));
}

TEST_F(Cli, UsageErrorsExitTwo) {
  TempDir d;
  EXPECT_EQ(run("phantom-gen --n 2 --size 63 --out " + (d / "x").string(), d / "log"), 2);
  EXPECT_EQ(run("train --config " + (d / "missing.json").string(), d / "log"), 2);
  EXPECT_EQ(run("train", d / "log"), 2);
  EXPECT_EQ(run("frobnicate", d / "log"), 2);
  EXPECT_EQ(run("train --config " + config() + " --lambda 0", d / "log"), 2);
  std::ofstream(d / "bad.json") << R"({"training": {"epoch": 3}})";
  EXPECT_EQ(run("train --config " + (d / "bad.json").string(), d / "log"), 2);
  EXPECT_NE(slurp(d / "log").find("unknown key"), std::string::npos);
}

TEST_F(Cli, TrainWritesResolvedConfigAndLogs) {
  EXPECT_TRUE(fs::exists(root() / "run" / "resolved_config.json"));
  EXPECT_TRUE(fs::exists(root() / "run" / "split.json"));
  EXPECT_TRUE(fs::exists(checkpoint()));
  EXPECT_NE(slurp(root() / "train.log").find("epoch   1"), std::string::npos);
  const auto resolved = nlohmann::json::parse(slurp(root() / "run" / "resolved_config.json"));
  EXPECT_EQ(resolved["seed"], 5);
  EXPECT_EQ(resolved["training"]["lambda"], 0.9);
}

TEST_F(Cli, SynthesizeKeepsGeometry) {
  TempDir d;
  const auto scan = root() / "data" / "phantom_001";
  ASSERT_EQ(run("synthesize --checkpoint " + checkpoint() + " --scan " + scan.string() + " --scenario 1010 --out " +
                    (d / "out").string(),
                d / "log"),
            0)
      << slurp(d / "log");
  EXPECT_FALSE(fs::exists(d / "out" / "T1.nii.gz"));
  EXPECT_FALSE(fs::exists(d / "out" / "T1c.nii.gz"));
  const auto ref = mmgan::nifti::read(scan / "T1.nii.gz");
  for (const char* seq : {"T2", "T2flair"}) {
    const auto img = mmgan::nifti::read(d / "out" / (std::string(seq) + ".nii.gz"));
    EXPECT_EQ(img.volume.shape, ref.volume.shape) << seq;
    EXPECT_EQ(img.spacing, ref.spacing) << seq;
  }
  const auto info = nlohmann::json::parse(slurp(d / "out" / "synthesis.json"));
  EXPECT_EQ(info["scenario"], "1010");
  EXPECT_GT(info["seconds"].get<double>(), 0.0);
}

TEST_F(Cli, SynthesizeErrors) {
  TempDir d;
  const auto scan = (root() / "data" / "phantom_001").string();
  const auto base = "synthesize --checkpoint " + checkpoint() + " --scan " + scan + " --out " + (d / "o").string();
  EXPECT_EQ(run(base + " --scenario 1111", d / "log"), 2);
  EXPECT_EQ(run(base + " --scenario 10", d / "log"), 2);

  // A scan whose grid cannot hold the training crop.
  fs::create_directories(d / "small");
  mmgan::VolumeF v(4, 8, 8);
  for (const char* seq : {"T1", "T2", "T1c", "T2flair"}) {
    for (auto& x : v.data) x = 1.0f;
    mmgan::nifti::write(d / "small" / (std::string(seq) + ".nii.gz"), v, {1.0, 1.0, 1.0});
  }
  EXPECT_EQ(run("synthesize --checkpoint " + checkpoint() + " --scan " + (d / "small").string() +
                    " --scenario 1110 --out " + (d / "o").string(),
                d / "log"),
            5);
  EXPECT_EQ(run("synthesize --checkpoint " + (d / "nope.pt").string() + " --scan " + scan + " --scenario 1110 --out " +
                    (d / "o").string(),
                d / "log"),
            3);
}

TEST_F(Cli, EvaluateReportsAndFilters) {
  TempDir d;
  ASSERT_EQ(run("evaluate --checkpoint " + checkpoint() + " --config " + config() + " --out " + (d / "all").string(),
                d / "log"),
            0)
      << slurp(d / "log");
  std::map<std::string, int> kinds;
  for (const auto& l : lines(d / "all" / "report.csv")) ++kinds[l.substr(0, l.find(','))];
  EXPECT_EQ(kinds["scenario"], 14);
  EXPECT_EQ(kinds["tier"], 3);
  EXPECT_EQ(kinds["grand"], 1);
  EXPECT_EQ(kinds["row"], 28);  // one test patient, 28 missing-sequence volumes
  EXPECT_TRUE(fs::exists(d / "all" / "resolved_config.json"));

  ASSERT_EQ(run("evaluate --checkpoint " + checkpoint() + " --config " + config() + " --scenarios 0001,0010 --stats planes --out " +
                    (d / "sub").string(),
                d / "log"),
            0)
      << slurp(d / "log");
  std::set<std::string> scen;
  for (const auto& l : lines(d / "sub" / "report.csv")) {
    if (l.rfind("scenario,", 0) == 0) scen.insert(l.substr(9, 4));
  }
  EXPECT_EQ(scen, (std::set<std::string>{"0001", "0010"}));
  const auto planes = lines(d / "sub" / "planes.csv");
  EXPECT_EQ(planes.size(), 1u + 3 + 3);
  const auto js = nlohmann::json::parse(slurp(d / "sub" / "report.json"));
  EXPECT_EQ(js["planes"].size(), 6u);
}

TEST_F(Cli, EvaluateRejectsIncompatibleCheckpoint) {
  TempDir d;
  auto cfg = nlohmann::json::parse(slurp(config()));
  cfg["dataset"]["channels"] = {"T1", "T2", "DWI", "T2flair"};
  std::ofstream(d / "other.json") << cfg.dump();
  EXPECT_EQ(run("evaluate --checkpoint " + checkpoint() + " --config " + (d / "other.json").string() + " --out " +
                    (d / "o").string(),
                d / "log"),
            5);
  EXPECT_EQ(run("evaluate --checkpoint " + checkpoint() + " --config " + config() + " --stats wilcoxon --out " +
                    (d / "o").string(),
                d / "log"),
            2);
}

TEST_F(Cli, ResumeFromCheckpointRunsToEnd) {
  TempDir d;
  EXPECT_EQ(run("train --config " + config() + " --epochs 2 --output-dir " + (d / "r").string() + " --resume " + checkpoint(),
                d / "log"),
            0)
      << slurp(d / "log");
  EXPECT_TRUE(fs::exists(d / "r" / "checkpoints" / "final.pt"));
}
