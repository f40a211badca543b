#include "rrl/agents.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace rrl::agents {

namespace {

using nlohmann::json;
using simworld::kNumActions;
using simworld::kNumDims;

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

void require_kind(const Agent& agent, bool ok, const char* op) {
  if (!ok)
    fail(std::string(op) + ": wrong agent kind " + kind_name(agent.spec.kind));
}

}  // namespace

std::string kind_name(AgentKind kind) {
  switch (kind) {
    case AgentKind::SlDnn: return "sl_dnn";
    case AgentKind::SlRnn: return "sl_rnn";
    case AgentKind::SlLstm: return "sl_lstm";
    case AgentKind::Dqn: return "dqn";
    case AgentKind::RlRnn: return "rl_rnn";
    case AgentKind::RlLstm: return "rl_lstm";
    case AgentKind::HybridRnn: return "hybrid_rnn";
    case AgentKind::HybridLstm: return "hybrid_lstm";
  }
  throw std::logic_error("kind_name: bad enum");
}

AgentKind kind_from_name(const std::string& name) {
  if (name == "sl_dnn") return AgentKind::SlDnn;
  if (name == "sl_rnn") return AgentKind::SlRnn;
  if (name == "sl_lstm") return AgentKind::SlLstm;
  if (name == "dqn") return AgentKind::Dqn;
  if (name == "rl_rnn") return AgentKind::RlRnn;
  if (name == "rl_lstm") return AgentKind::RlLstm;
  if (name == "hybrid_rnn") return AgentKind::HybridRnn;
  if (name == "hybrid_lstm") return AgentKind::HybridLstm;
  throw std::invalid_argument("unknown agent kind: " + name);
}

bool is_sl(AgentKind kind) {
  return kind == AgentKind::SlDnn || kind == AgentKind::SlRnn || kind == AgentKind::SlLstm;
}

bool is_rl(AgentKind kind) {
  return kind == AgentKind::Dqn || kind == AgentKind::RlRnn || kind == AgentKind::RlLstm;
}

bool is_hybrid(AgentKind kind) {
  return kind == AgentKind::HybridRnn || kind == AgentKind::HybridLstm;
}

bool is_recurrent(AgentKind kind) {
  return kind != AgentKind::SlDnn && kind != AgentKind::Dqn;
}

bool has_lstm_core(AgentKind kind) {
  return kind == AgentKind::SlLstm || kind == AgentKind::RlLstm ||
         kind == AgentKind::HybridLstm;
}

void AgentSpec::validate() const {
  if (kind == AgentKind::Dqn) {
    if (window < 1 || window > 3)
      fail("AgentSpec: DQN window " + std::to_string(window) + " out of {1,2,3}");
  } else if (window != 1) {
    fail("AgentSpec: window is only meaningful for DQN");
  }
  if (hidden < 1) fail("AgentSpec: hidden size must be positive");
  if (mlp_hidden < 1) fail("AgentSpec: mlp hidden size must be positive");
}

Agent make_agent(const AgentSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  Agent agent;
  agent.spec = spec;
  const WorldConfig& world = spec.world;
  const int enc = world.enc_dim();
  const int obs_dim = world.obs_onehot_dim();

  switch (spec.kind) {
    case AgentKind::SlDnn:
      agent.mlp.layers.push_back(
          numkit::make_dense(obs_dim, spec.mlp_hidden, numkit::Activation::Relu, rng));
      agent.mlp.layers.push_back(
          numkit::make_dense(spec.mlp_hidden, kNumActions, numkit::Activation::Identity, rng));
      break;
    case AgentKind::Dqn:
      agent.mlp.layers.push_back(numkit::make_dense(spec.window * obs_dim, spec.mlp_hidden,
                                                    numkit::Activation::Relu, rng));
      agent.mlp.layers.push_back(
          numkit::make_dense(spec.mlp_hidden, kNumActions, numkit::Activation::Identity, rng));
      break;
    case AgentKind::SlRnn:
    case AgentKind::RlRnn:
      agent.rnn = numkit::make_rnn(enc, spec.hidden, rng);
      agent.out_head =
          numkit::make_dense(spec.hidden, kNumActions, numkit::Activation::Identity, rng);
      break;
    case AgentKind::SlLstm:
    case AgentKind::RlLstm:
      agent.lstm = numkit::make_lstm(enc, spec.hidden, rng);
      agent.out_head =
          numkit::make_dense(spec.hidden, kNumActions, numkit::Activation::Identity, rng);
      break;
    case AgentKind::HybridRnn:
    case AgentKind::HybridLstm:
      if (spec.kind == AgentKind::HybridRnn)
        agent.rnn = numkit::make_rnn(enc, spec.hidden, rng);
      else
        agent.lstm = numkit::make_lstm(enc, spec.hidden, rng);
      agent.out_head =
          numkit::make_dense(spec.hidden, kNumActions, numkit::Activation::Identity, rng);
      agent.obs_head =
          numkit::make_dense(spec.hidden, obs_dim, numkit::Activation::Identity, rng);
      agent.mlp.layers.push_back(
          numkit::make_dense(spec.hidden, spec.mlp_hidden, numkit::Activation::Relu, rng));
      agent.mlp.layers.push_back(
          numkit::make_dense(spec.mlp_hidden, kNumActions, numkit::Activation::Identity, rng));
      break;
  }
  agent_reset(agent);
  return agent;
}

AgentGrads make_grads(const Agent& agent) {
  AgentGrads g;
  g.mlp = numkit::zeros_like(agent.mlp);
  g.rnn = numkit::zeros_like(agent.rnn);
  g.lstm = numkit::zeros_like(agent.lstm);
  g.out_head = numkit::zeros_like(agent.out_head);
  g.obs_head = numkit::zeros_like(agent.obs_head);
  return g;
}

void collect_blocks(Agent& agent, std::vector<std::span<double>>& out) {
  numkit::collect_blocks(agent.mlp, out);
  numkit::collect_blocks(agent.rnn, out);
  numkit::collect_blocks(agent.lstm, out);
  numkit::collect_blocks(agent.out_head, out);
  numkit::collect_blocks(agent.obs_head, out);
}

void collect_blocks(AgentGrads& grads, std::vector<std::span<double>>& out) {
  numkit::collect_blocks(grads.mlp, out);
  numkit::collect_blocks(grads.rnn, out);
  numkit::collect_blocks(grads.lstm, out);
  numkit::collect_blocks(grads.out_head, out);
  numkit::collect_blocks(grads.obs_head, out);
}

void apply_sgd(Agent& agent, const AgentGrads& grads, double eta) {
  std::vector<std::span<double>> pb, gb;
  collect_blocks(agent, pb);
  collect_blocks(const_cast<AgentGrads&>(grads), gb);
  if (pb.size() != gb.size()) fail("apply_sgd: block count mismatch");
  for (std::size_t k = 0; k < pb.size(); ++k) {
    if (pb[k].size() != gb[k].size()) fail("apply_sgd: block shape mismatch");
    for (std::size_t i = 0; i < pb[k].size(); ++i) pb[k][i] -= eta * gb[k][i];
  }
}

double grads_squared_norm(const AgentGrads& grads) {
  std::vector<std::span<double>> gb;
  collect_blocks(const_cast<AgentGrads&>(grads), gb);
  double s = 0.0;
  for (const auto& b : gb)
    for (double v : b) s += v * v;
  return s;
}

void scale_grads(AgentGrads& grads, double factor) {
  std::vector<std::span<double>> gb;
  collect_blocks(grads, gb);
  for (auto& b : gb)
    for (double& v : b) v *= factor;
}

numkit::Vec flatten_params(const Agent& agent) {
  std::vector<std::span<double>> blocks;
  collect_blocks(const_cast<Agent&>(agent), blocks);
  Vec flat;
  for (const auto& b : blocks) flat.insert(flat.end(), b.begin(), b.end());
  return flat;
}

void unflatten_params(Agent& agent, std::span<const double> flat) {
  std::vector<std::span<double>> blocks;
  collect_blocks(agent, blocks);
  std::size_t pos = 0;
  for (auto& b : blocks) {
    if (pos + b.size() > flat.size()) fail("unflatten_params: flat vector too short");
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = flat[pos + i];
    pos += b.size();
  }
  if (pos != flat.size()) fail("unflatten_params: flat vector too long");
}

void agent_reset(Agent& agent) {
  const AgentSpec& spec = agent.spec;
  agent.state.h.assign(is_recurrent(spec.kind) ? static_cast<std::size_t>(spec.hidden) : 0, 0.0);
  agent.state.c.assign(has_lstm_core(spec.kind) ? static_cast<std::size_t>(spec.hidden) : 0, 0.0);
  agent.state.step = 0;
  agent.window_buf.clear();
  if (spec.kind == AgentKind::Dqn)
    agent.window_buf.assign(static_cast<std::size_t>(spec.window), Observation{-1, -1, -1, -1, -1});
  agent.steps_seen = 0;
  agent.prev_action = -1;
  agent.prev_reward = 0.0;
}

void agent_commit(Agent& agent, int action, double reward) {
  if (action < 0 || action >= kNumActions) fail("agent_commit: action out of range");
  agent.prev_action = action;
  agent.prev_reward = reward;
}

namespace {

// Advances the recurrent core with the encoding of (obs, prev action/reward).
void advance_core(Agent& agent, const Observation& obs) {
  Vec enc;
  simworld::encode_step_into(agent.spec.world, obs, agent.prev_action, agent.prev_reward, enc);
  if (has_lstm_core(agent.spec.kind)) {
    numkit::LstmState next =
        numkit::lstm_step(agent.lstm, enc, {agent.state.h, agent.state.c});
    agent.state.h = std::move(next.h);
    agent.state.c = std::move(next.c);
  } else {
    agent.state.h = numkit::rnn_step(agent.rnn, enc, agent.state.h);
  }
  agent.state.step += 1;
  agent.steps_seen += 1;
}

// One-hot window input for the DQN from its ring buffer; slots holding the
// pre-episode marker encode as zeros.
Vec window_input(const Agent& agent) {
  const WorldConfig& world = agent.spec.world;
  const int obs_dim = world.obs_onehot_dim();
  Vec input(static_cast<std::size_t>(agent.spec.window) * obs_dim, 0.0);
  for (int k = 0; k < agent.spec.window; ++k) {
    const Observation& o = agent.window_buf[static_cast<std::size_t>(k)];
    if (o[0] < 0) continue;  // zero padding
    int off = k * obs_dim;
    for (int d = 0; d < kNumDims; ++d) {
      input[static_cast<std::size_t>(off + o[d])] = 1.0;
      off += world.cardinalities[d];
    }
  }
  return input;
}

}  // namespace

Vec sl_predict(Agent& agent, const Observation& obs) {
  require_kind(agent, is_sl(agent.spec.kind), "sl_predict");
  if (agent.spec.kind == AgentKind::SlDnn)
    return numkit::mlp_forward(agent.mlp, simworld::encode_observation(agent.spec.world, obs));
  advance_core(agent, obs);
  return numkit::dense_forward(agent.out_head, agent.state.h);
}

Vec q_values(Agent& agent, const Observation& obs) {
  require_kind(agent, is_rl(agent.spec.kind), "q_values");
  if (agent.spec.kind == AgentKind::Dqn) {
    agent.window_buf.erase(agent.window_buf.begin());
    agent.window_buf.push_back(obs);
    agent.steps_seen += 1;
    return numkit::mlp_forward(agent.mlp, window_input(agent));
  }
  advance_core(agent, obs);
  return numkit::dense_forward(agent.out_head, agent.state.h);
}

HybridOutput hybrid_forward(Agent& agent, const Observation& obs) {
  require_kind(agent, is_hybrid(agent.spec.kind), "hybrid_forward");
  advance_core(agent, obs);
  HybridOutput out;
  const Vec logits = numkit::dense_forward(agent.obs_head, agent.state.h);
  int off = 0;
  for (int d = 0; d < kNumDims; ++d) {
    const int card = agent.spec.world.cardinalities[d];
    out.obs_logits.emplace_back(logits.begin() + off, logits.begin() + off + card);
    off += card;
  }
  out.reward = numkit::dense_forward(agent.out_head, agent.state.h);
  out.q = numkit::mlp_forward(agent.mlp, agent.state.h);
  out.state = agent.state;
  return out;
}

Vec policy_values(Agent& agent, const Observation& obs) {
  if (is_sl(agent.spec.kind)) return sl_predict(agent, obs);
  if (is_rl(agent.spec.kind)) return q_values(agent, obs);
  return hybrid_forward(agent, obs).q;
}

int greedy_action(const Vec& values) {
  if (values.size() != kNumActions)
    fail("greedy_action: expected " + std::to_string(kNumActions) + " values, got " +
         std::to_string(values.size()));
  int best = 0;
  for (int a = 0; a < kNumActions; ++a) {
    if (!std::isfinite(values[static_cast<std::size_t>(a)]))
      fail("greedy_action: non-finite value at index " + std::to_string(a));
    if (values[static_cast<std::size_t>(a)] > values[static_cast<std::size_t>(best)]) best = a;
  }
  return best;
}

std::string agent_to_json(const Agent& agent) {
  json j;
  j["kind"] = kind_name(agent.spec.kind);
  j["spec"] = {{"cardinalities", agent.spec.world.cardinalities},
               {"window", agent.spec.window},
               {"hidden", agent.spec.hidden},
               {"mlp_hidden", agent.spec.mlp_hidden}};
  j["weights"] = flatten_params(agent);
  j["steps_seen"] = agent.steps_seen;
  return j.dump(2);
}

Agent agent_from_json(const std::string& json_text) {
  const json j = json::parse(json_text);
  AgentSpec spec;
  spec.kind = kind_from_name(j.at("kind").get<std::string>());
  spec.world.cardinalities =
      j.at("spec").at("cardinalities").get<std::array<int, kNumDims>>();
  spec.window = j.at("spec").at("window").get<int>();
  spec.hidden = j.at("spec").at("hidden").get<int>();
  spec.mlp_hidden = j.at("spec").at("mlp_hidden").get<int>();
  Agent agent = make_agent(spec, 0);
  const Vec weights = j.at("weights").get<Vec>();
  unflatten_params(agent, weights);
  agent.steps_seen = j.at("steps_seen").get<int>();
  return agent;
}

void save_checkpoint(const Agent& agent, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail("save_checkpoint: cannot open " + path);
  out << agent_to_json(agent) << "\n";
  if (!out) fail("save_checkpoint: write failed for " + path);
}

Agent load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("load_checkpoint: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return agent_from_json(buf.str());
}

simworld::RolloutPolicy greedy_rollout_policy(Agent& agent) {
  simworld::RolloutPolicy policy;
  policy.reset = [&agent] { agent_reset(agent); };
  policy.act = [&agent](const Observation& obs, Rng&) {
    return greedy_action(policy_values(agent, obs));
  };
  policy.commit = [&agent](int action, double reward) { agent_commit(agent, action, reward); };
  return policy;
}

// ---------------------------------------------------------------------------
// Sequence unrolls

std::vector<Vec> trajectory_encodings(const WorldConfig& config,
                                      const simworld::Trajectory& traj) {
  std::vector<Vec> encs(simworld::kHorizonSteps);
  for (int t = 0; t < simworld::kHorizonSteps; ++t)
    simworld::encode_step_into(config, traj.observations[static_cast<std::size_t>(t)],
                               t == 0 ? -1 : traj.actions[static_cast<std::size_t>(t) - 1],
                               t == 0 ? 0.0 : traj.rewards[static_cast<std::size_t>(t) - 1],
                               encs[static_cast<std::size_t>(t)]);
  return encs;
}

std::vector<Vec> core_unroll(const Agent& agent, const std::vector<Vec>& inputs,
                             CoreTape* tape) {
  require_kind(agent, is_recurrent(agent.spec.kind), "core_unroll");
  const auto steps = inputs.size();
  std::vector<Vec> hidden(steps);
  if (tape) {
    tape->steps = static_cast<int>(steps);
    tape->inputs = inputs;
  }
  if (has_lstm_core(agent.spec.kind)) {
    if (tape) tape->lstm_steps.resize(steps);
    numkit::LstmState state{Vec(static_cast<std::size_t>(agent.spec.hidden), 0.0),
                            Vec(static_cast<std::size_t>(agent.spec.hidden), 0.0)};
    for (std::size_t t = 0; t < steps; ++t) {
      state = numkit::lstm_step(agent.lstm, inputs[t], state,
                                tape ? &tape->lstm_steps[t] : nullptr);
      hidden[t] = state.h;
    }
  } else {
    if (tape) tape->rnn_steps.resize(steps);
    Vec h(static_cast<std::size_t>(agent.spec.hidden), 0.0);
    for (std::size_t t = 0; t < steps; ++t) {
      h = numkit::rnn_step(agent.rnn, inputs[t], h, tape ? &tape->rnn_steps[t] : nullptr);
      hidden[t] = h;
    }
  }
  return hidden;
}

void core_backward(const Agent& agent, const CoreTape& tape,
                   const std::vector<Vec>& dh_per_step, AgentGrads& grads) {
  require_kind(agent, is_recurrent(agent.spec.kind), "core_backward");
  if (tape.steps == 0) throw std::logic_error("core_backward: no cached forward pass");
  if (dh_per_step.size() != static_cast<std::size_t>(tape.steps))
    fail("core_backward: gradient/step count mismatch");
  const auto h_dim = static_cast<std::size_t>(agent.spec.hidden);

  if (has_lstm_core(agent.spec.kind)) {
    Vec dh(h_dim, 0.0), dc(h_dim, 0.0);
    for (int t = tape.steps - 1; t >= 0; --t) {
      Vec dh_total = dh_per_step[static_cast<std::size_t>(t)];
      if (dh_total.empty()) dh_total.assign(h_dim, 0.0);
      for (std::size_t k = 0; k < h_dim; ++k) dh_total[k] += dh[k];
      Vec dh_prev, dc_prev;
      numkit::lstm_step_backward(agent.lstm, tape.lstm_steps[static_cast<std::size_t>(t)],
                                 dh_total, dc, grads.lstm, nullptr, dh_prev, dc_prev);
      dh = std::move(dh_prev);
      dc = std::move(dc_prev);
    }
  } else {
    Vec dh(h_dim, 0.0);
    for (int t = tape.steps - 1; t >= 0; --t) {
      Vec dh_total = dh_per_step[static_cast<std::size_t>(t)];
      if (dh_total.empty()) dh_total.assign(h_dim, 0.0);
      for (std::size_t k = 0; k < h_dim; ++k) dh_total[k] += dh[k];
      Vec dh_prev;
      numkit::rnn_step_backward(agent.rnn, tape.rnn_steps[static_cast<std::size_t>(t)],
                                dh_total, grads.rnn, nullptr, dh_prev);
      dh = std::move(dh_prev);
    }
  }
}

Vec dqn_window_input(const AgentSpec& spec, const simworld::Trajectory& traj, int t) {
  const WorldConfig& world = spec.world;
  const int obs_dim = world.obs_onehot_dim();
  Vec input(static_cast<std::size_t>(spec.window) * obs_dim, 0.0);
  for (int k = 0; k < spec.window; ++k) {
    // slot k holds o_{t - window + 1 + k}; indices before the episode start
    // stay zero
    const int src = t - spec.window + 1 + k;
    if (src < 0) continue;
    const Observation& o = traj.observations[static_cast<std::size_t>(src)];
    int off = k * obs_dim;
    for (int d = 0; d < kNumDims; ++d) {
      input[static_cast<std::size_t>(off + o[d])] = 1.0;
      off += world.cardinalities[d];
    }
  }
  return input;
}

}  // namespace rrl::agents
