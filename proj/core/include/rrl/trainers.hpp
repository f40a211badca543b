#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rrl/agents.hpp"
#include "rrl/simworld.hpp"

// Training procedures: supervised reward regression, offline Q-learning with
// target networks (tabular and parametric), hybrid joint interleaved training
// with a stop-gradient at the hidden-state boundary, and the separate
// (two-phase) training ablation.

namespace rrl::trainers {

using agents::Agent;
using agents::AgentGrads;
using numkit::Vec;
using simworld::Dataset;
using simworld::Trajectory;

struct Hyperparams {
  double gamma = 0.9;
  double eta = 0.05;
  std::optional<double> eta_q;  // hybrid Q-head step size; defaults to eta
  std::optional<double> tau;  // SL reward label filter in dollars; nullopt = off
  int minibatch = 32;
  int iterations = 2000;
  int target_sync = 100;  // iterations between target-network syncs
  std::uint64_t seed = 0;

  // Rewards are scaled internally for numerical stability; greedy policies
  // are invariant to the scaling. Reported rewards stay in dollars.
  double reward_scale = 0.01;

  // Joint-hybrid loss weights.
  double sl_obs_weight = 1.0;
  double sl_reward_weight = 1.0;

  // Separate-training (two-phase) controls.
  int phase1_max_iterations = 3000;
  int phase1_check_every = 50;
  int phase1_patience = 8;

  void validate() const;
};

struct TrainRecord {
  int iteration = 0;
  std::optional<double> sl_loss;
  std::optional<double> td_loss;
  std::optional<double> eval_reward;
};

struct TrainLog {
  std::vector<TrainRecord> records;
};

// CSV columns iteration,sl_loss,td_loss,eval_reward with empty fields where a
// quantity does not apply.
void write_train_log_csv(const TrainLog& log, const std::string& path);

// Optional periodic evaluation hook; when set, every |every| iterations the
// trainer records fn(agent) as an eval_reward checkpoint.
struct EvalHook {
  int every = 0;
  std::function<double(const Agent&)> fn;
};

// ---------------------------------------------------------------------------
// Tabular Q-learning (sanity baseline for the parametric path)

struct TabularQ {
  int n_states = 0;
  int n_actions = 0;
  std::vector<double> q;

  TabularQ() = default;
  TabularQ(int states, int actions)
      : n_states(states), n_actions(actions),
        q(static_cast<std::size_t>(states) * static_cast<std::size_t>(actions), 0.0) {}

  double& at(int s, int a) { return q[static_cast<std::size_t>(s) * n_actions + a]; }
  double at(int s, int a) const { return q[static_cast<std::size_t>(s) * n_actions + a]; }
  double max_value(int s) const;
};

// Q(s,a) += eta * (r + gamma * max_a' Q(s',a') - Q(s,a)); terminal
// transitions bootstrap with zero.
void q_learning_tabular_update(TabularQ& table, int s, int a, double r, int s_next,
                               bool terminal, double gamma, double eta);

// ---------------------------------------------------------------------------
// Parametric Q-learning

// Copies the online network's parameters into the target network. Both agents
// must share a spec.
void target_network_sync(const Agent& online, Agent& target);

struct TransitionRef {
  const Trajectory* traj = nullptr;
  int t = 0;  // 0-based step within the trajectory
};

// One SGD step on the squared TD error of a minibatch, with bootstrap targets
// computed by the frozen target network. The windowed overload consumes
// individual transitions; the recurrent overload consumes whole trajectories
// and backpropagates through the full unroll. Returns the minibatch TD loss
// (scaled units). Throws if a TD target is non-finite.
double q_learning_param_update(Agent& online, const Agent& target,
                               std::span<const TransitionRef> batch, const Hyperparams& hp);
double q_learning_param_update(Agent& online, const Agent& target,
                               std::span<const Trajectory* const> batch,
                               const Hyperparams& hp);

// The Q step of hybrid training: hidden sequences are recomputed with the
// current core and treated as constant inputs, so the TD gradient reaches the
// Q head only and the recurrent core is bit-identical afterwards. TD targets
// come from the frozen snapshot in |target| (core and Q head).
double hybrid_q_head_update(Agent& online, const Agent& target,
                            std::span<const Trajectory* const> batch, const Hyperparams& hp);

// ---------------------------------------------------------------------------
// Training loops

// Minibatch SGD on the squared error between predicted per-action rewards and
// observed rewards, gradients flowing only through the taken action's output.
// Recurrent kinds train by full-sequence BPTT. With the tau filter on,
// transitions with r <= tau are excluded from the loss.
TrainLog train_sl(Agent& agent, const Dataset& train, const Hyperparams& hp,
                  const EvalHook* hook = nullptr);

// Mean squared error of the agent's reward predictions on a dataset (scaled
// units); used for validation tracking and model comparison.
double sl_validation_mse(const Agent& agent, const Dataset& ds, const Hyperparams& hp);

// Offline Q-learning over logged data: transition minibatches for the DQN,
// whole-trajectory minibatches for recurrent kinds, target network synced
// every hp.target_sync iterations.
TrainLog train_rl(Agent& agent, const Dataset& train, const Hyperparams& hp,
                  const EvalHook* hook = nullptr);

// Joint interleaved training of a hybrid agent. Each iteration first applies
// a supervised update (next-observation cross-entropy plus reward MSE,
// backpropagated through the heads and the recurrent core), then a Q update
// whose TD error reaches only the Q head: the hidden sequence is treated as a
// constant input, so no RL gradient touches the core. TD targets come from a
// frozen snapshot of the core and Q head, synced every hp.target_sync
// iterations.
TrainLog train_joint_hybrid(Agent& agent, const Dataset& train, const Hyperparams& hp,
                            const EvalHook* hook = nullptr);

// Two-phase ablation: phase 1 trains the core and supervised heads until the
// validation SL loss stops improving (patience-based), then freezes them;
// phase 2 trains only the Q head.
TrainLog train_separate_hybrid(Agent& agent, const Dataset& train, const Dataset& valid,
                               const Hyperparams& hp, const EvalHook* hook = nullptr);

}  // namespace rrl::trainers
