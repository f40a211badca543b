#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rrl/agents.hpp"
#include "rrl/simworld.hpp"
#include "rrl/trainers.hpp"

// Policy evaluation in the simulator, multi-seed aggregation, significance
// testing, learning-curve assembly, and an executable demonstration of the
// SAME/DEVIATED replay protocol (kept only to show why it can be gamed).

namespace rrl::evalkit {

using agents::Agent;
using numkit::Vec;
using simworld::Dataset;
using simworld::Observation;
using simworld::SimulatorSpec;
using simworld::Trajectory;

struct EvalResult {
  double mean_per_step_reward = 0.0;  // dollars
  double mean_discounted_return = 0.0;
  int n_episodes = 0;
};

// Rolls out seeded 22-step episodes with greedy action selection, resetting
// the agent's episode state per episode. The agent passed in is untouched
// (evaluation runs on an internal copy). Episodes use independently derived
// seeds and a fixed summation order, so results are bit-reproducible and
// independent of rollout parallelism.
EvalResult evaluate_policy(const SimulatorSpec& sim, const Agent& agent, int n_episodes,
                           std::uint64_t seed, double gamma = 0.9);

// Same rollout protocol for an arbitrary policy (reset/act/commit hooks); the
// policy runs serially.
EvalResult evaluate_rollout_policy(const SimulatorSpec& sim,
                                   const simworld::RolloutPolicy& policy, int n_episodes,
                                   std::uint64_t seed, double gamma = 0.9);

// Two-sided Welch t-test p-value. Requires at least 5 runs per side.
double significance_test(std::span<const double> runs_a, std::span<const double> runs_b);

// ---------------------------------------------------------------------------
// SAME/DEVIATED replay protocol

struct SameDeviatedResult {
  std::optional<double> same_mean;      // absent when the set is empty
  std::optional<double> deviated_mean;
  std::int64_t same_count = 0;
  std::int64_t deviated_count = 0;
};

// A replay policy sees the logged trajectory prefix (the logged actions and
// rewards drive its state) and proposes an action for step t (0-based).
using ReplayPolicy = std::function<int(const Trajectory&, int t)>;

// Replays logged test trajectories, queries the policy's action at each step,
// and partitions transitions by agreement with the logged action. SAME and
// DEVIATED partition the test transitions exactly.
SameDeviatedResult same_deviated_eval(const ReplayPolicy& policy, const Dataset& test);
SameDeviatedResult same_deviated_eval(const Agent& agent, const Dataset& test);

// Adapts an agent to the replay-policy interface (greedy actions, logged
// history fed into the agent's state).
ReplayPolicy replay_policy_for(const Agent& agent);

// ---------------------------------------------------------------------------
// Learning curves and per-setting aggregation

struct CurvePoint {
  int iteration = 0;
  double mean = 0.0;
  double stddev = 0.0;
  int n = 0;
};

// Per-checkpoint mean and standard deviation of eval_reward across logs. All
// logs must share the same checkpoint schedule.
std::vector<CurvePoint> assemble_learning_curve(std::span<const trainers::TrainLog> logs);

double mean_of(std::span<const double> xs);
double stddev_of(std::span<const double> xs);  // sample standard deviation

struct ModelStats {
  std::string model;
  std::vector<double> runs;  // one mean per seed
  double mean = 0.0;
  double stddev = 0.0;
};

struct EvalReport {
  std::string policy;
  std::int64_t data_size = 0;
  std::vector<ModelStats> models;
  // p_values[{a, b}] = Welch p-value between models a and b
  std::map<std::pair<std::string, std::string>, double> p_values;
};

// Aggregates per-seed run results into per-model stats plus all pairwise
// Welch p-values (computed only when both sides have >= 5 runs).
EvalReport build_report(const std::string& policy, std::int64_t data_size,
                        const std::vector<ModelStats>& models);

}  // namespace rrl::evalkit
