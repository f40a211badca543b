#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rrl/numkit.hpp"
#include "rrl/simworld.hpp"

// The eight model architectures: supervised reward regressors (DNN, RNN,
// LSTM), Q-networks (windowed DQN, RL-RNN, RL-LSTM), and the hybrid
// composites whose recurrent core feeds both supervised prediction heads and
// a Q head. Each agent exposes forward passes, per-episode state tracking,
// and greedy action selection.

namespace rrl::agents {

using numkit::Vec;
using simworld::Observation;
using simworld::WorldConfig;

enum class AgentKind {
  SlDnn,
  SlRnn,
  SlLstm,
  Dqn,
  RlRnn,
  RlLstm,
  HybridRnn,
  HybridLstm,
};

std::string kind_name(AgentKind kind);
AgentKind kind_from_name(const std::string& name);

bool is_sl(AgentKind kind);
bool is_rl(AgentKind kind);       // Q-network kinds (Dqn, RlRnn, RlLstm)
bool is_hybrid(AgentKind kind);
bool is_recurrent(AgentKind kind);  // any kind with a recurrent core
bool has_lstm_core(AgentKind kind);

struct AgentSpec {
  AgentKind kind = AgentKind::SlDnn;
  WorldConfig world;
  int window = 1;       // Dqn only, in {1, 2, 3}
  int hidden = 32;      // recurrent core width
  int mlp_hidden = 64;  // hidden width of DNN/DQN stacks and the hybrid Q head

  void validate() const;
  bool operator==(const AgentSpec&) const = default;
};

struct HiddenSummary {
  Vec h;
  Vec c;  // LSTM cores only
  int step = 0;
};

struct Agent {
  AgentSpec spec;

  // Parameter components; which ones are active depends on spec.kind.
  numkit::Mlp mlp;              // SlDnn/Dqn: whole net. Hybrid: Q head.
  numkit::RnnCell rnn;          // *Rnn cores
  numkit::LstmCell lstm;        // *Lstm cores
  numkit::DenseLayer out_head;  // recurrent kinds: reward or Q head
  numkit::DenseLayer obs_head;  // hybrid kinds: next-observation logits

  // Episode-tracking state.
  HiddenSummary state;
  std::vector<Observation> window_buf;  // Dqn: last w observations, oldest first
  int steps_seen = 0;
  int prev_action = -1;
  double prev_reward = 0.0;
};

// Gradient buffers, shape-congruent with the agent's parameter components.
struct AgentGrads {
  numkit::Mlp mlp;
  numkit::RnnCell rnn;
  numkit::LstmCell lstm;
  numkit::DenseLayer out_head;
  numkit::DenseLayer obs_head;
};

Agent make_agent(const AgentSpec& spec, std::uint64_t seed);
AgentGrads make_grads(const Agent& agent);
void apply_sgd(Agent& agent, const AgentGrads& grads, double eta);
double grads_squared_norm(const AgentGrads& grads);
void scale_grads(AgentGrads& grads, double factor);

void collect_blocks(Agent& agent, std::vector<std::span<double>>& out);
void collect_blocks(AgentGrads& grads, std::vector<std::span<double>>& out);
numkit::Vec flatten_params(const Agent& agent);
void unflatten_params(Agent& agent, std::span<const double> flat);

// Zeroes hidden summaries, clears the observation window (zero padding), and
// forgets the previous action/reward.
void agent_reset(Agent& agent);

// Records the action actually taken and the reward received; recurrent kinds
// feed both into the next step's encoding.
void agent_commit(Agent& agent, int action, double reward);

// Supervised kinds: 12 predicted immediate rewards. Recurrent kinds advance
// their hidden summary.
Vec sl_predict(Agent& agent, const Observation& obs);

// Q kinds: 12 action values. The DQN consumes the concatenated one-hot
// encodings of the last w observations (zero padded); recurrent kinds advance
// their hidden summary.
Vec q_values(Agent& agent, const Observation& obs);

struct HybridOutput {
  std::vector<Vec> obs_logits;  // one block of logits per observation dimension
  Vec reward;                   // 12 predicted immediate rewards
  Vec q;                        // 12 Q-values
  HiddenSummary state;          // summary after this step
};

// Hybrid kinds: advances the recurrent core, emits next-observation logits
// and per-action rewards from the supervised heads, and Q-values from the Q
// head that consumes the hidden summary as its state.
HybridOutput hybrid_forward(Agent& agent, const Observation& obs);

// Value vector for greedy control, whatever the kind (rewards for SL kinds,
// Q-values otherwise).
Vec policy_values(Agent& agent, const Observation& obs);

// Index of the maximum; ties break toward the lowest index. Throws on
// non-finite entries.
int greedy_action(const Vec& values);

// Checkpoint: JSON document {kind, spec, flat weights, step counter};
// bit-exact round trip.
std::string agent_to_json(const Agent& agent);
Agent agent_from_json(const std::string& json_text);
void save_checkpoint(const Agent& agent, const std::string& path);
Agent load_checkpoint(const std::string& path);

// Wraps the agent as a rollout policy for simworld::generate_dataset and
// evaluation loops: reset/act/commit drive the agent's episode state. The
// agent must outlive the returned policy.
simworld::RolloutPolicy greedy_rollout_policy(Agent& agent);

// ---------------------------------------------------------------------------
// Sequence unrolls shared by the trainers. These run on whole logged
// trajectories with a fresh hidden state and keep every intermediate needed
// for backpropagation through time.

struct CoreTape {
  std::vector<numkit::RnnStepCache> rnn_steps;
  std::vector<numkit::LstmStepCache> lstm_steps;
  std::vector<Vec> inputs;
  int steps = 0;
};

// Step encodings o_t, a_{t-1}, r_{t-1} for t = 1..22 of a logged trajectory.
std::vector<Vec> trajectory_encodings(const WorldConfig& config,
                                      const simworld::Trajectory& traj);

// Unrolls the agent's recurrent core over the inputs; returns h_t per step.
std::vector<Vec> core_unroll(const Agent& agent, const std::vector<Vec>& inputs,
                             CoreTape* tape = nullptr);

// Backpropagates per-step hidden-state gradients through the recurrent core,
// accumulating into |grads|. dh_per_step[t] is the gradient arriving at h_t
// from the heads at step t.
void core_backward(const Agent& agent, const CoreTape& tape,
                   const std::vector<Vec>& dh_per_step, AgentGrads& grads);

// Concatenated one-hot window [o_{t-w+1} .. o_t] with zero padding before the
// first step; |t| is 0-based into the trajectory's observations.
Vec dqn_window_input(const AgentSpec& spec, const simworld::Trajectory& traj, int t);

}  // namespace rrl::agents
