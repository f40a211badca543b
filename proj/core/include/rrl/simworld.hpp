#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rrl/numkit.hpp"
#include "rrl/rng.hpp"

// Domain data model for donor interaction sequences, dataset ingestion and
// generation, the factored simulator (per-dimension observation tables plus a
// recurrent reward function), seeded synthetic ground-truth worlds, and the
// U/M/R data-collection policies.

namespace rrl::simworld {

using numkit::Vec;

inline constexpr int kNumDims = 5;
inline constexpr int kNumActions = 12;
inline constexpr int kHorizonObs = 23;    // observations per trajectory
inline constexpr int kHorizonSteps = 22;  // (action, reward) pairs per trajectory
inline constexpr double kMaxReward = 1000.0;

struct WorldConfig {
  std::array<int, kNumDims> cardinalities{8, 8, 8, 8, 12};

  int obs_onehot_dim() const {
    int n = 0;
    for (int c : cardinalities) n += c;
    return n;
  }
  // Step encoding: one-hot observation per dimension, one-hot previous
  // action, previous reward scaled to [0, 1].
  int enc_dim() const { return obs_onehot_dim() + kNumActions + 1; }

  bool operator==(const WorldConfig&) const = default;
};

using Observation = std::array<int, kNumDims>;

// Writes the step encoding for (o_t, a_{t-1}, r_{t-1}); pass prev_action = -1
// at t = 1 (the action/reward slots stay zero).
Vec encode_step(const WorldConfig& config, const Observation& obs, int prev_action,
                double prev_reward);
void encode_step_into(const WorldConfig& config, const Observation& obs, int prev_action,
                      double prev_reward, Vec& out);

// Concatenated per-dimension one-hot encoding of an observation alone.
Vec encode_observation(const WorldConfig& config, const Observation& obs);

struct Trajectory {
  std::int64_t donor_id = 0;
  std::vector<Observation> observations;  // exactly 23
  std::vector<int> actions;               // exactly 22
  std::vector<double> rewards;            // exactly 22

  void validate(const WorldConfig& config) const;  // throws on any violation
};

enum class Split { None, Train, Valid, Test };

struct Dataset {
  std::vector<Trajectory> trajectories;
  std::array<std::int64_t, kNumActions> action_counts{};
  Split split = Split::None;

  std::size_t transition_count() const { return trajectories.size() * kHorizonSteps; }
  void rebuild_histogram();
  void validate(const WorldConfig& config) const;
  double mean_reward() const;
};

// CSV with header donor_id,t,o1,o2,o3,o4,o5,action,reward; one row per step,
// t in [1,23], action and reward empty on t=23 rows.
Dataset load_sequences(const std::string& path, const WorldConfig& config);
void save_sequences(const Dataset& ds, const std::string& path);

// Donor-level 4:1:1 split with a seeded shuffle. Requires >= 6 donors.
struct SplitResult {
  Dataset train, valid, test;
};
SplitResult split_dataset(const Dataset& ds, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Factored observation model: for each dimension d an independent conditional
// categorical P(o'_d | o_d, a, donated) with donated = 1{r > 0}.

struct ObsTables {
  WorldConfig config;
  double alpha = 0.1;
  std::array<std::vector<double>, kNumDims> probs;

  void allocate();
  std::span<double> row(int dim, int value, int action, int donated);
  std::span<const double> row(int dim, int value, int action, int donated) const;
  int row_count(int dim) const { return config.cardinalities[dim] * kNumActions * 2; }
  void validate() const;  // every row sums to 1 within 1e-9, all entries >= 0
};

// Maximum-likelihood conditional frequencies with add-alpha smoothing; a
// context never observed yields the uniform row.
ObsTables fit_observation_tables(const Dataset& ds, const WorldConfig& config, double alpha);

// ---------------------------------------------------------------------------
// Recurrent reward function: r(h_t, a) = clamp(scale * head(h_t)[a], 0, 1000).

struct RewardNet {
  numkit::RnnCell cell;
  numkit::DenseLayer head;  // kNumActions outputs, identity activation
  double output_scale = 100.0;

  int hidden_dim() const { return cell.hidden_dim(); }
  double predict(const Vec& hidden, int action) const;
};

RewardNet make_reward_net(const WorldConfig& config, int hidden_dim, std::uint64_t seed);

struct RewardFit {
  RewardNet net;
  std::vector<double> train_loss;  // per-epoch mean squared error (scaled units)
  std::vector<double> valid_loss;  // empty when no validation set given
};

// Squared-error regression of r_t against the recurrent summary of the
// interaction history, trained per-trajectory with full BPTT. Throws when the
// loss becomes non-finite (suggests a smaller eta).
RewardFit fit_reward_net(const Dataset& train, const Dataset* valid, const WorldConfig& config,
                         int hidden_dim, int epochs, double eta, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Initial observation distribution: either an empirical support list (fitted
// from data) or an independent categorical per dimension (synthetic worlds).

struct InitialObsDist {
  std::vector<Observation> support;
  std::vector<double> support_probs;
  std::array<std::vector<double>, kNumDims> factored;  // used if support empty

  Observation sample(Rng& rng) const;
  void validate(const WorldConfig& config) const;
};

InitialObsDist fit_initial_dist(const Dataset& ds, const WorldConfig& config);

struct SimulatorSpec {
  WorldConfig config;
  ObsTables tables;
  RewardNet reward;
  InitialObsDist initial;
  std::uint64_t seed = 0;

  void validate() const;
};

std::string simspec_to_json(const SimulatorSpec& spec);
SimulatorSpec simspec_from_json(const std::string& json_text);
void save_simspec(const SimulatorSpec& spec, const std::string& path);
SimulatorSpec load_simspec(const std::string& path);

// ---------------------------------------------------------------------------
// Episode simulation

struct SimState {
  Observation obs{};
  int step = 1;  // index of the next action, 1..22
  Vec hidden;    // reward-net history summary (advanced inside sim_step)
  int prev_action = -1;
  double prev_reward = 0.0;
  bool done = false;
};

SimState sim_reset(const SimulatorSpec& sim, Rng& rng);

struct StepResult {
  Observation obs;
  double reward = 0.0;
  bool done = false;
};

// Reward is a deterministic function of the interaction history and action;
// each next-observation dimension is sampled independently. Throws when the
// episode is already finished.
StepResult sim_step(const SimulatorSpec& sim, SimState& state, int action, Rng& rng);

// ---------------------------------------------------------------------------
// Data-collection policies (U / M / R plus a greedy hook for learned agents).

struct RolloutPolicy {
  std::function<void()> reset;                            // episode start
  std::function<int(const Observation&, Rng&)> act;       // choose an action
  std::function<void(int, double)> commit;                // observe (a, r)
};

struct BehaviorPolicy {
  enum class Kind { Uniform, Matching, Replay, Greedy };
  Kind kind = Kind::Uniform;
  std::array<double, kNumActions> histogram{};  // Matching
  const Dataset* log = nullptr;                 // Replay
  RolloutPolicy greedy;                         // Greedy (supplied by caller)

  static BehaviorPolicy uniform();
  static BehaviorPolicy matching(const std::array<double, kNumActions>& histogram);
  static BehaviorPolicy matching_from(const Dataset& raw);
  static BehaviorPolicy replay(const Dataset& raw);
  static BehaviorPolicy greedy_policy(RolloutPolicy policy);
};

struct BehaviorContext {
  const Trajectory* logged = nullptr;  // Replay source trajectory
  int step = 0;                        // 1-based step index
  const Observation* obs = nullptr;    // current observation (Greedy)
};

int behavior_action(const BehaviorPolicy& policy, const BehaviorContext& ctx, Rng& rng);

// Rolls out ceil(n_transitions / 22) full trajectories under the policy.
// Donors use independently derived seeds, so generation may be parallelized
// without changing the result. Replay policies reuse the logged donors'
// observations and actions and only regenerate rewards.
Dataset generate_dataset(const SimulatorSpec& sim, const BehaviorPolicy& policy,
                         std::int64_t n_transitions, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic ground truth

struct RandomWorldOptions {
  int reward_hidden = 16;
  // Target standard deviations of each pre-activation contribution in the
  // reward cell, measured over warmup rollouts and enforced by rescaling the
  // corresponding weight block. Keeping the cell out of tanh saturation is
  // what lets observations, actions, and past donations genuinely move the
  // hidden customer state; the reward-feedback block is the channel that
  // makes chasing immediate donations depress future response.
  double obs_drive = 0.5;
  double action_drive = 0.5;
  double reward_feedback_drive = 0.5;
  double recurrent_drive = 0.9;
  double mean_reward_lo = 5.0;  // accepted band for the mean reward under U
  double mean_reward_hi = 15.0;
  int calibration_steps = 10000;  // Monte-Carlo steps per bisection probe
};

// Dirichlet(1) observation tables, a factored Dirichlet(1) initial
// distribution, and a randomly initialized recurrent reward function whose
// output scale is bisected until the mean per-step reward under the uniform
// policy falls in [mean_reward_lo, mean_reward_hi]. Deterministic given seed.
SimulatorSpec random_world(const WorldConfig& config, std::uint64_t seed,
                           const RandomWorldOptions& options = {});

}  // namespace rrl::simworld
