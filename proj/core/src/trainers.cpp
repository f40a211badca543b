#include "rrl/trainers.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace rrl::trainers {

namespace {

using agents::AgentKind;
using simworld::kHorizonSteps;
using simworld::kNumActions;

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

double max_of(const Vec& v) {
  double m = v[0];
  for (double x : v) m = std::max(m, x);
  return m;
}

void check_finite(double x, const char* what) {
  if (!std::isfinite(x)) fail(std::string(what) + " is non-finite; try a smaller eta");
}

std::vector<std::size_t> sample_indices(Rng& rng, std::size_t pool, int count) {
  std::vector<std::size_t> idx(static_cast<std::size_t>(count));
  for (auto& i : idx) i = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(pool)));
  return idx;
}

// Softmax of a logit block; returns probabilities.
Vec softmax(const Vec& logits) {
  const double m = max_of(logits);
  Vec p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

}  // namespace

void Hyperparams::validate() const {
  if (!(gamma >= 0.0 && gamma < 1.0)) fail("Hyperparams: gamma must be in [0,1)");
  if (!(eta > 0.0)) fail("Hyperparams: eta must be positive");
  if (eta_q && !(*eta_q > 0.0)) fail("Hyperparams: eta_q must be positive");
  if (target_sync < 1) fail("Hyperparams: target_sync must be >= 1");
  if (minibatch < 1) fail("Hyperparams: minibatch must be >= 1");
  if (iterations < 0) fail("Hyperparams: iterations must be >= 0");
  if (!(reward_scale > 0.0)) fail("Hyperparams: reward_scale must be positive");
}

void write_train_log_csv(const TrainLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail("write_train_log_csv: cannot open " + path);
  out << "iteration,sl_loss,td_loss,eval_reward\n";
  const auto field = [](const std::optional<double>& v) {
    if (!v) return std::string();
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), *v);
    return ec == std::errc{} ? std::string(buf, ptr) : std::string("nan");
  };
  for (const auto& r : log.records)
    out << r.iteration << ',' << field(r.sl_loss) << ',' << field(r.td_loss) << ','
        << field(r.eval_reward) << '\n';
  if (!out) fail("write_train_log_csv: write failed for " + path);
}

// ---------------------------------------------------------------------------
// Tabular

double TabularQ::max_value(int s) const {
  double m = at(s, 0);
  for (int a = 1; a < n_actions; ++a) m = std::max(m, at(s, a));
  return m;
}

void q_learning_tabular_update(TabularQ& table, int s, int a, double r, int s_next,
                               bool terminal, double gamma, double eta) {
  if (s < 0 || s >= table.n_states || a < 0 || a >= table.n_actions ||
      (!terminal && (s_next < 0 || s_next >= table.n_states)))
    fail("q_learning_tabular_update: index out of range");
  const double bootstrap = terminal ? 0.0 : gamma * table.max_value(s_next);
  table.at(s, a) += eta * (r + bootstrap - table.at(s, a));
}

// ---------------------------------------------------------------------------
// Parametric Q updates

void target_network_sync(const Agent& online, Agent& target) {
  if (!(online.spec == target.spec)) fail("target_network_sync: spec mismatch");
  target.mlp = online.mlp;
  target.rnn = online.rnn;
  target.lstm = online.lstm;
  target.out_head = online.out_head;
  target.obs_head = online.obs_head;
}

double q_learning_param_update(Agent& online, const Agent& target,
                               std::span<const TransitionRef> batch, const Hyperparams& hp) {
  if (online.spec.kind != AgentKind::Dqn)
    fail("q_learning_param_update(transitions): agent must be a DQN");
  if (!(online.spec == target.spec)) fail("q_learning_param_update: target spec mismatch");
  if (batch.empty()) return 0.0;

  numkit::Mlp grads = numkit::zeros_like(online.mlp);
  const double norm = static_cast<double>(batch.size());
  double loss = 0.0;
  for (const TransitionRef& ref : batch) {
    const Trajectory& traj = *ref.traj;
    const Vec input = agents::dqn_window_input(online.spec, traj, ref.t);
    numkit::MlpCache cache;
    const Vec q = numkit::mlp_forward(online.mlp, input, &cache);
    const int action = traj.actions[static_cast<std::size_t>(ref.t)];
    double tgt = traj.rewards[static_cast<std::size_t>(ref.t)] * hp.reward_scale;
    if (ref.t + 1 < kHorizonSteps) {
      const Vec q_next = numkit::mlp_forward(
          target.mlp, agents::dqn_window_input(target.spec, traj, ref.t + 1));
      tgt += hp.gamma * max_of(q_next);
    }
    check_finite(tgt, "TD target");
    const double err = q[static_cast<std::size_t>(action)] - tgt;
    loss += err * err;
    Vec dout(kNumActions, 0.0);
    dout[static_cast<std::size_t>(action)] = 2.0 * err / norm;
    numkit::mlp_backward(online.mlp, cache, dout, grads);
  }
  numkit::sgd_step(online.mlp, grads, hp.eta);
  return loss / norm;
}

double q_learning_param_update(Agent& online, const Agent& target,
                               std::span<const Trajectory* const> batch,
                               const Hyperparams& hp) {
  if (online.spec.kind != AgentKind::RlRnn && online.spec.kind != AgentKind::RlLstm)
    fail("q_learning_param_update(trajectories): agent must be RL-RNN or RL-LSTM");
  if (!(online.spec == target.spec)) fail("q_learning_param_update: target spec mismatch");
  if (batch.empty()) return 0.0;

  AgentGrads grads = agents::make_grads(online);
  const double norm = static_cast<double>(batch.size()) * kHorizonSteps;
  double loss = 0.0;
  for (const Trajectory* traj : batch) {
    const auto encs = agents::trajectory_encodings(online.spec.world, *traj);
    const auto target_h = agents::core_unroll(target, encs);
    agents::CoreTape tape;
    const auto h = agents::core_unroll(online, encs, &tape);

    std::vector<Vec> dh(static_cast<std::size_t>(kHorizonSteps));
    for (int t = 0; t < kHorizonSteps; ++t) {
      numkit::DenseCache head_cache;
      const Vec q =
          numkit::dense_forward(online.out_head, h[static_cast<std::size_t>(t)], &head_cache);
      const int action = traj->actions[static_cast<std::size_t>(t)];
      double tgt = traj->rewards[static_cast<std::size_t>(t)] * hp.reward_scale;
      if (t + 1 < kHorizonSteps) {
        const Vec q_next =
            numkit::dense_forward(target.out_head, target_h[static_cast<std::size_t>(t) + 1]);
        tgt += hp.gamma * max_of(q_next);
      }
      check_finite(tgt, "TD target");
      const double err = q[static_cast<std::size_t>(action)] - tgt;
      loss += err * err;
      Vec dout(kNumActions, 0.0);
      dout[static_cast<std::size_t>(action)] = 2.0 * err / norm;
      dh[static_cast<std::size_t>(t)] =
          numkit::dense_backward(online.out_head, head_cache, dout, grads.out_head);
    }
    agents::core_backward(online, tape, dh, grads);
  }
  agents::apply_sgd(online, grads, hp.eta);
  return loss / norm;
}

// ---------------------------------------------------------------------------
// Supervised training

namespace {

bool tau_keep(const Hyperparams& hp, double reward) { return !hp.tau || reward > *hp.tau; }

// One SGD step for a recurrent SL agent on a minibatch of trajectories.
// Returns the mean loss and the number of contributing transitions.
std::pair<double, int> sl_recurrent_step(Agent& agent,
                                         std::span<const Trajectory* const> batch,
                                         const Hyperparams& hp) {
  struct TrajWork {
    agents::CoreTape tape;
    std::vector<numkit::DenseCache> head_caches;
    std::vector<double> errs;       // 0 where filtered out
    std::vector<bool> contributes;
  };
  std::vector<TrajWork> work(batch.size());
  int n_contrib = 0;
  double loss = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Trajectory& traj = *batch[b];
    const auto encs = agents::trajectory_encodings(agent.spec.world, traj);
    const auto h = agents::core_unroll(agent, encs, &work[b].tape);
    work[b].head_caches.resize(kHorizonSteps);
    work[b].errs.assign(kHorizonSteps, 0.0);
    work[b].contributes.assign(kHorizonSteps, false);
    for (int t = 0; t < kHorizonSteps; ++t) {
      const Vec out = numkit::dense_forward(agent.out_head, h[static_cast<std::size_t>(t)],
                                            &work[b].head_caches[static_cast<std::size_t>(t)]);
      const double reward = traj.rewards[static_cast<std::size_t>(t)];
      if (!tau_keep(hp, reward)) continue;
      const int action = traj.actions[static_cast<std::size_t>(t)];
      const double err = out[static_cast<std::size_t>(action)] - reward * hp.reward_scale;
      work[b].errs[static_cast<std::size_t>(t)] = err;
      work[b].contributes[static_cast<std::size_t>(t)] = true;
      loss += err * err;
      ++n_contrib;
    }
  }
  if (n_contrib == 0) return {0.0, 0};

  AgentGrads grads = agents::make_grads(agent);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Trajectory& traj = *batch[b];
    std::vector<Vec> dh(static_cast<std::size_t>(kHorizonSteps));
    for (int t = 0; t < kHorizonSteps; ++t) {
      if (!work[b].contributes[static_cast<std::size_t>(t)]) continue;
      const int action = traj.actions[static_cast<std::size_t>(t)];
      Vec dout(kNumActions, 0.0);
      dout[static_cast<std::size_t>(action)] =
          2.0 * work[b].errs[static_cast<std::size_t>(t)] / static_cast<double>(n_contrib);
      dh[static_cast<std::size_t>(t)] = numkit::dense_backward(
          agent.out_head, work[b].head_caches[static_cast<std::size_t>(t)], dout,
          grads.out_head);
    }
    agents::core_backward(agent, work[b].tape, dh, grads);
  }
  agents::apply_sgd(agent, grads, hp.eta);
  return {loss / n_contrib, n_contrib};
}

}  // namespace

TrainLog train_sl(Agent& agent, const Dataset& train, const Hyperparams& hp,
                  const EvalHook* hook) {
  if (!agents::is_sl(agent.spec.kind)) fail("train_sl: agent kind is not supervised");
  hp.validate();
  if (train.trajectories.empty()) fail("train_sl: empty training set");
  Rng rng(hp.seed);
  TrainLog log;

  if (agent.spec.kind == AgentKind::SlDnn) {
    std::vector<TransitionRef> pool;
    for (const auto& traj : train.trajectories)
      for (int t = 0; t < kHorizonSteps; ++t)
        if (tau_keep(hp, traj.rewards[static_cast<std::size_t>(t)]))
          pool.push_back({&traj, t});
    for (int it = 1; it <= hp.iterations; ++it) {
      TrainRecord rec;
      rec.iteration = it;
      if (!pool.empty()) {
        numkit::Mlp grads = numkit::zeros_like(agent.mlp);
        const auto idx = sample_indices(rng, pool.size(), hp.minibatch);
        double loss = 0.0;
        for (const std::size_t i : idx) {
          const TransitionRef& ref = pool[i];
          const Vec input = simworld::encode_observation(
              agent.spec.world, ref.traj->observations[static_cast<std::size_t>(ref.t)]);
          numkit::MlpCache cache;
          const Vec out = numkit::mlp_forward(agent.mlp, input, &cache);
          const int action = ref.traj->actions[static_cast<std::size_t>(ref.t)];
          const double err = out[static_cast<std::size_t>(action)] -
                             ref.traj->rewards[static_cast<std::size_t>(ref.t)] * hp.reward_scale;
          loss += err * err;
          Vec dout(kNumActions, 0.0);
          dout[static_cast<std::size_t>(action)] =
              2.0 * err / static_cast<double>(idx.size());
          numkit::mlp_backward(agent.mlp, cache, dout, grads);
        }
        numkit::sgd_step(agent.mlp, grads, hp.eta);
        const double mean_loss = loss / static_cast<double>(idx.size());
        check_finite(mean_loss, "SL loss");
        rec.sl_loss = mean_loss;
      }
      if (hook && hook->every > 0 && it % hook->every == 0) rec.eval_reward = hook->fn(agent);
      log.records.push_back(rec);
    }
    return log;
  }

  // recurrent SL: minibatches of whole trajectories
  for (int it = 1; it <= hp.iterations; ++it) {
    const auto idx = sample_indices(rng, train.trajectories.size(), hp.minibatch);
    std::vector<const Trajectory*> batch;
    batch.reserve(idx.size());
    for (const std::size_t i : idx) batch.push_back(&train.trajectories[i]);
    const auto [loss, n] = sl_recurrent_step(agent, batch, hp);
    TrainRecord rec;
    rec.iteration = it;
    if (n > 0) {
      check_finite(loss, "SL loss");
      rec.sl_loss = loss;
    }
    if (hook && hook->every > 0 && it % hook->every == 0) rec.eval_reward = hook->fn(agent);
    log.records.push_back(rec);
  }
  return log;
}

double sl_validation_mse(const Agent& agent, const Dataset& ds, const Hyperparams& hp) {
  if (ds.trajectories.empty()) fail("sl_validation_mse: empty dataset");
  double loss = 0.0;
  std::int64_t n = 0;
  if (agent.spec.kind == AgentKind::SlDnn) {
    for (const auto& traj : ds.trajectories)
      for (int t = 0; t < kHorizonSteps; ++t) {
        const Vec out = numkit::mlp_forward(
            agent.mlp, simworld::encode_observation(
                           agent.spec.world, traj.observations[static_cast<std::size_t>(t)]));
        const double err = out[static_cast<std::size_t>(
                               traj.actions[static_cast<std::size_t>(t)])] -
                           traj.rewards[static_cast<std::size_t>(t)] * hp.reward_scale;
        loss += err * err;
        ++n;
      }
  } else if (agents::is_sl(agent.spec.kind) || agents::is_hybrid(agent.spec.kind)) {
    for (const auto& traj : ds.trajectories) {
      const auto encs = agents::trajectory_encodings(agent.spec.world, traj);
      const auto h = agents::core_unroll(agent, encs);
      for (int t = 0; t < kHorizonSteps; ++t) {
        const Vec out = numkit::dense_forward(agent.out_head, h[static_cast<std::size_t>(t)]);
        const double err = out[static_cast<std::size_t>(
                               traj.actions[static_cast<std::size_t>(t)])] -
                           traj.rewards[static_cast<std::size_t>(t)] * hp.reward_scale;
        loss += err * err;
        ++n;
      }
    }
  } else {
    fail("sl_validation_mse: agent has no reward head");
  }
  return loss / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Reinforcement training

TrainLog train_rl(Agent& agent, const Dataset& train, const Hyperparams& hp,
                  const EvalHook* hook) {
  if (!agents::is_rl(agent.spec.kind)) fail("train_rl: agent kind is not a Q-network");
  hp.validate();
  if (train.trajectories.empty()) fail("train_rl: empty training set");
  Rng rng(hp.seed);
  TrainLog log;
  Agent target = agent;

  std::vector<TransitionRef> pool;
  if (agent.spec.kind == AgentKind::Dqn)
    for (const auto& traj : train.trajectories)
      for (int t = 0; t < kHorizonSteps; ++t) pool.push_back({&traj, t});

  for (int it = 1; it <= hp.iterations; ++it) {
    double loss = 0.0;
    if (agent.spec.kind == AgentKind::Dqn) {
      const auto idx = sample_indices(rng, pool.size(), hp.minibatch);
      std::vector<TransitionRef> batch;
      batch.reserve(idx.size());
      for (const std::size_t i : idx) batch.push_back(pool[i]);
      loss = q_learning_param_update(agent, target, batch, hp);
    } else {
      const auto idx = sample_indices(rng, train.trajectories.size(), hp.minibatch);
      std::vector<const Trajectory*> batch;
      batch.reserve(idx.size());
      for (const std::size_t i : idx) batch.push_back(&train.trajectories[i]);
      loss = q_learning_param_update(agent, target, batch, hp);
    }
    check_finite(loss, "TD loss");
    TrainRecord rec;
    rec.iteration = it;
    rec.td_loss = loss;
    if (hook && hook->every > 0 && it % hook->every == 0) rec.eval_reward = hook->fn(agent);
    log.records.push_back(rec);
    if (it % hp.target_sync == 0) target_network_sync(agent, target);
  }
  return log;
}

// ---------------------------------------------------------------------------
// Hybrid training

namespace {

// Supervised update for a hybrid agent: next-observation cross-entropy plus
// reward MSE, backpropagated through both heads and the recurrent core.
// Returns (obs loss, reward loss).
std::pair<double, double> hybrid_sl_step(Agent& agent,
                                         std::span<const Trajectory* const> batch,
                                         const Hyperparams& hp) {
  AgentGrads grads = agents::make_grads(agent);
  const auto& world = agent.spec.world;
  const double step_norm = static_cast<double>(batch.size()) * kHorizonSteps;
  const double obs_norm = step_norm * simworld::kNumDims;
  double obs_loss = 0.0;
  double reward_loss = 0.0;

  for (const Trajectory* traj : batch) {
    const auto encs = agents::trajectory_encodings(world, *traj);
    agents::CoreTape tape;
    const auto h = agents::core_unroll(agent, encs, &tape);
    std::vector<Vec> dh(static_cast<std::size_t>(kHorizonSteps));
    for (int t = 0; t < kHorizonSteps; ++t) {
      const Vec& ht = h[static_cast<std::size_t>(t)];
      // next-observation cross-entropy per dimension
      numkit::DenseCache obs_cache;
      const Vec logits = numkit::dense_forward(agent.obs_head, ht, &obs_cache);
      Vec dlogits(logits.size(), 0.0);
      int off = 0;
      for (int d = 0; d < simworld::kNumDims; ++d) {
        const int card = world.cardinalities[d];
        const Vec block(logits.begin() + off, logits.begin() + off + card);
        const Vec p = softmax(block);
        const int target_v = traj->observations[static_cast<std::size_t>(t) + 1][d];
        obs_loss -= std::log(std::max(p[static_cast<std::size_t>(target_v)], 1e-300));
        for (int k = 0; k < card; ++k) {
          const double indicator = k == target_v ? 1.0 : 0.0;
          dlogits[static_cast<std::size_t>(off + k)] =
              hp.sl_obs_weight * (p[static_cast<std::size_t>(k)] - indicator) / obs_norm;
        }
        off += card;
      }
      Vec dht = numkit::dense_backward(agent.obs_head, obs_cache, dlogits, grads.obs_head);

      // reward MSE on the taken action
      numkit::DenseCache reward_cache;
      const Vec pred = numkit::dense_forward(agent.out_head, ht, &reward_cache);
      const int action = traj->actions[static_cast<std::size_t>(t)];
      const double err = pred[static_cast<std::size_t>(action)] -
                         traj->rewards[static_cast<std::size_t>(t)] * hp.reward_scale;
      reward_loss += err * err;
      Vec dout(kNumActions, 0.0);
      dout[static_cast<std::size_t>(action)] = hp.sl_reward_weight * 2.0 * err / step_norm;
      const Vec dht_r = numkit::dense_backward(agent.out_head, reward_cache, dout, grads.out_head);
      for (std::size_t k = 0; k < dht.size(); ++k) dht[k] += dht_r[k];
      dh[static_cast<std::size_t>(t)] = std::move(dht);
    }
    agents::core_backward(agent, tape, dh, grads);
  }

  // apply to core and supervised heads only
  if (agents::has_lstm_core(agent.spec.kind))
    numkit::sgd_step(agent.lstm, grads.lstm, hp.eta);
  else
    numkit::sgd_step(agent.rnn, grads.rnn, hp.eta);
  numkit::sgd_step(agent.obs_head, grads.obs_head, hp.eta);
  numkit::sgd_step(agent.out_head, grads.out_head, hp.eta);

  return {obs_loss / obs_norm, reward_loss / step_norm};
}

// Validation SL loss (no update) for a hybrid agent.
double hybrid_sl_loss(const Agent& agent, const Dataset& ds, const Hyperparams& hp) {
  const auto& world = agent.spec.world;
  double obs_loss = 0.0;
  double reward_loss = 0.0;
  for (const auto& traj : ds.trajectories) {
    const auto encs = agents::trajectory_encodings(world, traj);
    const auto h = agents::core_unroll(agent, encs);
    for (int t = 0; t < kHorizonSteps; ++t) {
      const Vec logits = numkit::dense_forward(agent.obs_head, h[static_cast<std::size_t>(t)]);
      int off = 0;
      for (int d = 0; d < simworld::kNumDims; ++d) {
        const int card = world.cardinalities[d];
        const Vec block(logits.begin() + off, logits.begin() + off + card);
        const Vec p = softmax(block);
        const int target_v = traj.observations[static_cast<std::size_t>(t) + 1][d];
        obs_loss -= std::log(std::max(p[static_cast<std::size_t>(target_v)], 1e-300));
        off += card;
      }
      const Vec pred = numkit::dense_forward(agent.out_head, h[static_cast<std::size_t>(t)]);
      const double err = pred[static_cast<std::size_t>(
                             traj.actions[static_cast<std::size_t>(t)])] -
                         traj.rewards[static_cast<std::size_t>(t)] * hp.reward_scale;
      reward_loss += err * err;
    }
  }
  const double steps = static_cast<double>(ds.trajectories.size()) * kHorizonSteps;
  return hp.sl_obs_weight * obs_loss / (steps * simworld::kNumDims) +
         hp.sl_reward_weight * reward_loss / steps;
}

std::vector<const Trajectory*> sample_batch(Rng& rng, const Dataset& ds, int count) {
  std::vector<const Trajectory*> batch;
  batch.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i)
    batch.push_back(
        &ds.trajectories[static_cast<std::size_t>(rng.uniform_int(
            static_cast<int>(ds.trajectories.size())))]);
  return batch;
}

}  // namespace

double hybrid_q_head_update(Agent& agent, const Agent& target,
                            std::span<const Trajectory* const> batch, const Hyperparams& hp) {
  if (!agents::is_hybrid(agent.spec.kind))
    fail("hybrid_q_head_update: agent is not hybrid");
  if (!(agent.spec == target.spec)) fail("hybrid_q_head_update: target spec mismatch");
  numkit::Mlp grads = numkit::zeros_like(agent.mlp);
  const double norm = static_cast<double>(batch.size()) * kHorizonSteps;
  double loss = 0.0;
  for (const Trajectory* traj : batch) {
    const auto encs = agents::trajectory_encodings(agent.spec.world, *traj);
    const auto h = agents::core_unroll(agent, encs);
    const auto target_h = agents::core_unroll(target, encs);
    for (int t = 0; t < kHorizonSteps; ++t) {
      numkit::MlpCache cache;
      const Vec q = numkit::mlp_forward(agent.mlp, h[static_cast<std::size_t>(t)], &cache);
      const int action = traj->actions[static_cast<std::size_t>(t)];
      double tgt = traj->rewards[static_cast<std::size_t>(t)] * hp.reward_scale;
      if (t + 1 < kHorizonSteps) {
        const Vec q_next =
            numkit::mlp_forward(target.mlp, target_h[static_cast<std::size_t>(t) + 1]);
        tgt += hp.gamma * max_of(q_next);
      }
      check_finite(tgt, "TD target");
      const double err = q[static_cast<std::size_t>(action)] - tgt;
      loss += err * err;
      Vec dout(kNumActions, 0.0);
      dout[static_cast<std::size_t>(action)] = 2.0 * err / norm;
      numkit::mlp_backward(agent.mlp, cache, dout, grads);
    }
  }
  numkit::sgd_step(agent.mlp, grads, hp.eta_q.value_or(hp.eta));
  return loss / norm;
}

TrainLog train_joint_hybrid(Agent& agent, const Dataset& train, const Hyperparams& hp,
                            const EvalHook* hook) {
  if (!agents::is_hybrid(agent.spec.kind)) fail("train_joint_hybrid: agent is not hybrid");
  hp.validate();
  if (train.trajectories.empty()) fail("train_joint_hybrid: empty training set");
  Rng rng(hp.seed);
  TrainLog log;
  Agent target = agent;  // frozen snapshot of core and Q head for TD targets

  for (int it = 1; it <= hp.iterations; ++it) {
    const auto batch = sample_batch(rng, train, hp.minibatch);
    const auto [obs_loss, reward_loss] = hybrid_sl_step(agent, batch, hp);
    const double td_loss = hybrid_q_head_update(agent, target, batch, hp);
    const double sl_loss =
        hp.sl_obs_weight * obs_loss + hp.sl_reward_weight * reward_loss;
    check_finite(sl_loss, "SL loss");
    check_finite(td_loss, "TD loss");
    TrainRecord rec;
    rec.iteration = it;
    rec.sl_loss = sl_loss;
    rec.td_loss = td_loss;
    if (hook && hook->every > 0 && it % hook->every == 0) rec.eval_reward = hook->fn(agent);
    log.records.push_back(rec);
    if (it % hp.target_sync == 0) target_network_sync(agent, target);
  }
  return log;
}

TrainLog train_separate_hybrid(Agent& agent, const Dataset& train, const Dataset& valid,
                               const Hyperparams& hp, const EvalHook* hook) {
  if (!agents::is_hybrid(agent.spec.kind)) fail("train_separate_hybrid: agent is not hybrid");
  hp.validate();
  if (train.trajectories.empty()) fail("train_separate_hybrid: empty training set");
  Rng rng(hp.seed);
  TrainLog log;

  // Phase 1: supervised training of the core and SL heads, early-stopped on
  // the validation SL loss.
  double best_valid = std::numeric_limits<double>::infinity();
  Vec best_params = agents::flatten_params(agent);
  int checks_without_improvement = 0;
  int it = 0;
  while (it < hp.phase1_max_iterations) {
    ++it;
    const auto batch = sample_batch(rng, train, hp.minibatch);
    const auto [obs_loss, reward_loss] = hybrid_sl_step(agent, batch, hp);
    const double sl_loss = hp.sl_obs_weight * obs_loss + hp.sl_reward_weight * reward_loss;
    check_finite(sl_loss, "SL loss");
    TrainRecord rec;
    rec.iteration = it;
    rec.sl_loss = sl_loss;
    log.records.push_back(rec);
    if (it % hp.phase1_check_every == 0 && !valid.trajectories.empty()) {
      const double v = hybrid_sl_loss(agent, valid, hp);
      if (v < best_valid - 1e-9) {
        best_valid = v;
        best_params = agents::flatten_params(agent);
        checks_without_improvement = 0;
      } else if (++checks_without_improvement >= hp.phase1_patience) {
        break;
      }
    }
  }
  if (std::isfinite(best_valid)) agents::unflatten_params(agent, best_params);

  // Phase 2: the core is frozen; only the Q head trains. TD targets use the
  // frozen core and a periodically synced copy of the Q head.
  Agent target = agent;
  for (int it2 = 1; it2 <= hp.iterations; ++it2) {
    const auto batch = sample_batch(rng, train, hp.minibatch);
    const double td_loss = hybrid_q_head_update(agent, target, batch, hp);
    check_finite(td_loss, "TD loss");
    TrainRecord rec;
    rec.iteration = it + it2;
    rec.td_loss = td_loss;
    if (hook && hook->every > 0 && it2 % hook->every == 0) rec.eval_reward = hook->fn(agent);
    log.records.push_back(rec);
    if (it2 % hp.target_sync == 0) target.mlp = agent.mlp;
  }
  return log;
}

}  // namespace rrl::trainers
