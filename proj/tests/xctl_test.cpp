#include "rrl/xctl.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace rrl;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  EXPECT_TRUE(in.good()) << path;
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("rrl_xctl_" + name);
  fs::remove_all(dir);
  return dir;
}

xctl::ExperimentConfig tiny_config(const std::string& out_dir) {
  xctl::ExperimentConfig config;
  config.experiment_id = "custom";
  config.policies = {"M"};
  config.data_sizes = {1320};  // 60 donors
  config.models = {"sl_dnn", "dqn"};
  config.seeds = {1, 2};
  config.significance = false;
  config.hyper.iterations = 40;
  config.eval_episodes = 40;
  config.curve_points = 2;
  config.curve_episodes = 20;
  config.world_seed = 451;
  config.out_dir = out_dir;
  return config;
}

}  // namespace

TEST(Preset, E1HasPolicyMAndHundredK) {
  const auto config = xctl::preset("E1");
  EXPECT_EQ(config.policies, std::vector<std::string>{"M"});
  EXPECT_EQ(config.data_sizes, std::vector<std::int64_t>{100000});
  EXPECT_EQ(config.models.size(), 8u);
  EXPECT_DOUBLE_EQ(config.hyper.gamma, 0.9);
  EXPECT_GE(config.seeds.size(), 5u);
}

TEST(Preset, E2SweepsPolicies) {
  const auto config = xctl::preset("E2");
  EXPECT_EQ(config.policies, (std::vector<std::string>{"U", "M", "R"}));
  EXPECT_EQ(config.data_sizes, std::vector<std::int64_t>{100000});
}

TEST(Preset, E3SweepsDataSizes) {
  const auto config = xctl::preset("E3");
  EXPECT_EQ(config.policies, std::vector<std::string>{"M"});
  EXPECT_EQ(config.data_sizes,
            (std::vector<std::int64_t>{50000, 100000, 200000, 500000}));
}

TEST(Preset, UnknownNameThrows) { EXPECT_THROW(xctl::preset("E9"), std::exception); }

TEST(ValidateConfig, FlagsBadDiscount) {
  auto config = xctl::preset("E1");
  config.hyper.gamma = 1.2;
  const auto violations = xctl::validate_config(config);
  ASSERT_FALSE(violations.empty());
  bool found = false;
  for (const auto& v : violations)
    if (v.find("discount out of (0,1)") != std::string::npos) found = true;
  EXPECT_TRUE(found);
}

TEST(ValidateConfig, FlagsEmptySeeds) {
  auto config = xctl::preset("E1");
  config.seeds.clear();
  const auto violations = xctl::validate_config(config);
  bool found = false;
  for (const auto& v : violations)
    if (v.find("seeds") != std::string::npos) found = true;
  EXPECT_TRUE(found);
}

TEST(ValidateConfig, PresetsAreClean) {
  for (const std::string name : {"E1", "E2", "E3"})
    EXPECT_TRUE(xctl::validate_config(xctl::preset(name)).empty()) << name;
}

TEST(ValidateConfig, FlagsUnknownModelAndPolicy) {
  auto config = xctl::preset("E1");
  config.models.push_back("perceptron");
  config.policies.push_back("Z");
  const auto violations = xctl::validate_config(config);
  EXPECT_GE(violations.size(), 2u);
}

TEST(ConfigJson, RoundTripPreservesEverything) {
  auto config = xctl::preset("E2");
  config.hyper.tau = 5.0;
  config.eta_rl = 0.002;
  config.jobs = 3;
  const std::string text = xctl::config_to_json(config);
  const auto loaded = xctl::config_from_json(text);
  EXPECT_EQ(xctl::config_to_json(loaded), text);
  EXPECT_EQ(loaded.policies, config.policies);
  EXPECT_EQ(loaded.seeds, config.seeds);
  ASSERT_TRUE(loaded.hyper.tau.has_value());
  EXPECT_DOUBLE_EQ(*loaded.hyper.tau, 5.0);
  EXPECT_DOUBLE_EQ(loaded.eta_rl, 0.002);
}

TEST(RunExperiment, InvalidConfigReturnsTwo) {
  auto config = tiny_config(fresh_dir("invalid").string());
  config.policies.clear();
  EXPECT_EQ(xctl::run_experiment(config), 2);
}

TEST(RunExperiment, SmokeRunEmitsArtifacts) {
  const fs::path dir = fresh_dir("smoke");
  const auto config = tiny_config(dir.string());
  ASSERT_EQ(xctl::run_experiment(config), 0);
  for (const char* name : {"runs.csv", "summary.csv", "curves.csv", "config.snapshot.json",
                           "world.json"})
    EXPECT_TRUE(fs::exists(dir / name)) << name;

  // one checkpoint and one run record per RunKey
  int checkpoints = 0;
  for ([[maybe_unused]] const auto& entry : fs::directory_iterator(dir / "checkpoints"))
    ++checkpoints;
  EXPECT_EQ(checkpoints, 4);  // 2 models x 2 seeds

  // runs.csv holds one line per key plus the header
  std::istringstream runs(slurp(dir / "runs.csv"));
  std::string line;
  int lines = 0;
  while (std::getline(runs, line))
    if (!line.empty()) ++lines;
  EXPECT_EQ(lines, 5);
  fs::remove_all(dir);
}

TEST(RunExperiment, RerunIsByteIdentical) {
  const fs::path dir_a = fresh_dir("det_a");
  const fs::path dir_b = fresh_dir("det_b");
  auto config_a = tiny_config(dir_a.string());
  auto config_b = tiny_config(dir_b.string());
  ASSERT_EQ(xctl::run_experiment(config_a), 0);
  ASSERT_EQ(xctl::run_experiment(config_b), 0);
  EXPECT_EQ(slurp(dir_a / "summary.csv"), slurp(dir_b / "summary.csv"));
  EXPECT_EQ(slurp(dir_a / "runs.csv"), slurp(dir_b / "runs.csv"));
  EXPECT_EQ(slurp(dir_a / "curves.csv"), slurp(dir_b / "curves.csv"));
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST(RunExperiment, CompletedRunsAreResumed) {
  const fs::path dir = fresh_dir("resume");
  const auto config = tiny_config(dir.string());
  ASSERT_EQ(xctl::run_experiment(config), 0);
  const std::string summary_first = slurp(dir / "summary.csv");

  // drop one run record; the rerun regenerates only that key and reproduces
  // the same report
  const fs::path dropped = dir / "runs" / "dqn_M_1320_s1.json";
  ASSERT_TRUE(fs::exists(dropped));
  fs::remove(dropped);
  const auto t_before = fs::last_write_time(dir / "runs" / "sl_dnn_M_1320_s1.json");
  ASSERT_EQ(xctl::run_experiment(config), 0);
  EXPECT_TRUE(fs::exists(dropped));
  EXPECT_EQ(slurp(dir / "summary.csv"), summary_first);
  // untouched keys were not recomputed
  EXPECT_EQ(fs::last_write_time(dir / "runs" / "sl_dnn_M_1320_s1.json"), t_before);
  fs::remove_all(dir);
}

TEST(RunExperiment, ConfigSnapshotMatchesInputBytes) {
  const fs::path dir = fresh_dir("snapshot");
  auto config = tiny_config(dir.string());
  const std::string raw = "{\"exact\": \"bytes\"}\n";  // snapshot is verbatim
  // raw is not a valid config document, but run_experiment only snapshots it
  ASSERT_EQ(xctl::run_experiment(config, raw), 0);
  EXPECT_EQ(slurp(dir / "config.snapshot.json"), raw);
  fs::remove_all(dir);
}

TEST(Gradcheck, ReportPassesAtSpecThreshold) {
  const auto report = xctl::run_gradcheck(3, 11);
  EXPECT_TRUE(report.passed(1e-4));
  EXPECT_GT(report.corrupted_error, 0.1);
  EXPECT_EQ(report.rows.size(), 4u);
}
