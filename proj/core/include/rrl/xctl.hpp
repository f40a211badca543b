#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rrl/evalkit.hpp"
#include "rrl/simworld.hpp"
#include "rrl/trainers.hpp"

// Experiment orchestration: config documents, the E1/E2/E3 presets, the job
// scheduler that runs (model, policy, data size, seed) combinations, and the
// CSV reports they produce.

namespace rrl::xctl {

// World seed used by the presets; documented in the README. The synthetic
// world it selects has strongly history-dependent rewards.
inline constexpr std::uint64_t kDefaultWorldSeed = 1601;

struct ExperimentConfig {
  std::string experiment_id = "custom";  // E1 | E2 | E3 | custom
  std::vector<std::string> policies;     // subset of {"U", "M", "R"}
  std::vector<std::int64_t> data_sizes;  // transitions per dataset
  std::vector<std::string> models;       // roster, see kModelNames
  std::vector<std::uint64_t> seeds;

  simworld::WorldConfig world;
  std::string world_source = "random";  // "random" | "file"
  std::string world_file;               // used when world_source == "file"
  std::uint64_t world_seed = kDefaultWorldSeed;

  int agent_hidden = 32;
  int agent_mlp_hidden = 64;
  trainers::Hyperparams hyper;
  // per-family step sizes (Q-learning needs a smaller one than regression)
  double eta_sl = 0.05;
  double eta_rl = 0.01;
  double eta_hybrid = 0.05;    // supervised step of joint training
  double eta_hybrid_q = 0.01;  // Q-head step of joint training

  int eval_episodes = 2000;
  int curve_points = 10;    // learning-curve checkpoints per run
  int curve_episodes = 200; // rollout episodes per checkpoint
  bool significance = true; // require >= 5 seeds and emit p-values

  std::string out_dir = "out";
  int jobs = 0;  // worker threads; 0 = hardware concurrency
};

// Known model names: the eight-model roster plus the separate-training hybrid
// ablations.
const std::vector<std::string>& model_names();
bool is_known_model(const std::string& name);

// Table-style presets:
//   E1: policy M, 100K transitions
//   E2: policies {U, M, R}, 100K transitions
//   E3: policy M, {50K, 100K, 200K, 500K} transitions
// with the full eight-model roster and gamma = 0.9.
ExperimentConfig preset(const std::string& name);

// Empty iff the config satisfies every invariant; each violation names the
// offending field and rule.
std::vector<std::string> validate_config(const ExperimentConfig& config);

std::string config_to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);
void save_config(const ExperimentConfig& config, const std::string& path);

struct RunKey {
  std::string model;
  std::string policy;
  std::int64_t data_size = 0;
  std::uint64_t seed = 0;

  std::string to_string() const;
  auto operator<=>(const RunKey&) const = default;
};

// Runs every RunKey job (generate data, split 4:1:1, train, evaluate), then
// aggregates into runs.csv, summary.csv, curves.csv, a config snapshot, and
// per-run agent checkpoints under out_dir. Completed runs are keyed by
// (config hash, RunKey) and skipped on rerun. Returns 0 on success, 1 when
// any job failed, 2 on invalid config. When |raw_config| is nonempty it is
// written byte-for-byte as the config snapshot.
int run_experiment(const ExperimentConfig& config, const std::string& raw_config = {});

// ---------------------------------------------------------------------------
// Self-check commands

struct GradcheckRow {
  std::string architecture;
  int instances = 0;
  double max_rel_error = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckRow> rows;
  bool corrupted_detected = false;  // deliberately broken backward must fail loudly
  double corrupted_error = 0.0;
  bool passed(double threshold = 1e-4) const;
};

// Finite-difference verification of every architecture the repo trains: DNN,
// 22-step RNN and LSTM unrolls, and the hybrid heads, plus a corrupted
// backward pass that must be caught.
GradcheckReport run_gradcheck(int instances_per_arch = 20, std::uint64_t seed = 7);

struct SimcheckReport {
  double fit_max_row_tv = 0.0;       // table recovery from 100K transitions
  int fit_rows_checked = 0;
  double step_max_row_tv = 0.0;      // sim_step sampling vs stored rows
  int step_rows_checked = 0;
  bool passed(double fit_tol = 0.05, double step_tol = 0.02) const;
};

// Observation-table consistency: fitting tables from generated transitions
// must recover the generating rows (total variation per row), and sim_step's
// sampling frequencies must match the stored rows.
SimcheckReport run_simcheck(std::uint64_t seed = 7);

}  // namespace rrl::xctl
