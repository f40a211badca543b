#include "rrl/agents.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

using namespace rrl;
using agents::Agent;
using agents::AgentKind;
using agents::AgentSpec;
using numkit::Vec;
using simworld::Observation;
using simworld::WorldConfig;

namespace {

AgentSpec spec_for(AgentKind kind, int window = 1) {
  AgentSpec spec;
  spec.kind = kind;
  spec.window = window;
  spec.hidden = 8;
  spec.mlp_hidden = 10;
  return spec;
}

Observation obs_of(int v) {
  Observation o{};
  for (int d = 0; d < simworld::kNumDims; ++d) o[d] = v % 8;
  return o;
}

}  // namespace

TEST(AgentReset, ForwardAfterResetEqualsFreshAgent) {
  for (const AgentKind kind : {AgentKind::SlRnn, AgentKind::SlLstm, AgentKind::RlRnn,
                               AgentKind::Dqn, AgentKind::HybridRnn}) {
    Agent a = agents::make_agent(spec_for(kind, kind == AgentKind::Dqn ? 3 : 1), 5);
    Agent fresh = a;
    // advance a few steps, then reset
    for (int t = 0; t < 4; ++t) {
      agents::policy_values(a, obs_of(t));
      agents::agent_commit(a, t % 12, 3.0);
    }
    agents::agent_reset(a);
    EXPECT_EQ(agents::policy_values(a, obs_of(7)), agents::policy_values(fresh, obs_of(7)))
        << agents::kind_name(kind);
  }
}

TEST(AgentReset, DoubleResetIsIdempotent) {
  Agent a = agents::make_agent(spec_for(AgentKind::RlLstm), 6);
  agents::policy_values(a, obs_of(1));
  agents::agent_commit(a, 4, 1.0);
  agents::agent_reset(a);
  const Agent snapshot = a;
  agents::agent_reset(a);
  EXPECT_EQ(a.state.h, snapshot.state.h);
  EXPECT_EQ(a.state.c, snapshot.state.c);
  EXPECT_EQ(a.prev_action, snapshot.prev_action);
}

TEST(AgentReset, DqnWindowZeroPadded) {
  Agent a = agents::make_agent(spec_for(AgentKind::Dqn, 3), 7);
  EXPECT_EQ(a.window_buf.size(), 3u);
  // at t=1 the window encodes [0, 0, o]: only the freshest block is non-zero,
  // so the Q output must match a hand-built input
  const Observation o = obs_of(3);
  const Vec q = agents::q_values(a, o);

  const int obs_dim = a.spec.world.obs_onehot_dim();
  Vec input(static_cast<std::size_t>(3) * obs_dim, 0.0);
  int off = 2 * obs_dim;
  for (int d = 0; d < simworld::kNumDims; ++d) {
    input[static_cast<std::size_t>(off + o[d])] = 1.0;
    off += a.spec.world.cardinalities[d];
  }
  EXPECT_EQ(q, numkit::mlp_forward(a.mlp, input));
}

TEST(SlPredict, ZeroWeightsYieldBiasVector) {
  Agent a = agents::make_agent(spec_for(AgentKind::SlDnn), 8);
  for (auto& layer : a.mlp.layers)
    for (double& w : layer.w.data) w = 0.0;
  Vec bias(simworld::kNumActions);
  for (int i = 0; i < simworld::kNumActions; ++i) bias[static_cast<std::size_t>(i)] = 0.5 * i;
  a.mlp.layers.back().b = bias;
  a.mlp.layers.front().b.assign(a.mlp.layers.front().b.size(), 0.0);
  EXPECT_EQ(agents::sl_predict(a, obs_of(2)), bias);
  EXPECT_EQ(agents::sl_predict(a, obs_of(5)), bias);
}

TEST(SlPredict, DnnIsHistoryBlind) {
  Agent a = agents::make_agent(spec_for(AgentKind::SlDnn), 9);
  Agent b = a;
  // two different histories
  for (int t = 0; t < 5; ++t) {
    agents::sl_predict(a, obs_of(t));
    agents::agent_commit(a, 1, 10.0);
  }
  agents::sl_predict(b, obs_of(7));
  agents::agent_commit(b, 9, 0.0);
  EXPECT_EQ(agents::sl_predict(a, obs_of(4)), agents::sl_predict(b, obs_of(4)));
}

TEST(SlPredict, RecurrentKindsAreHistorySensitive) {
  for (const AgentKind kind : {AgentKind::SlRnn, AgentKind::SlLstm}) {
    Agent a = agents::make_agent(spec_for(kind), 10);
    Agent b = a;
    agents::sl_predict(a, obs_of(0));
    agents::agent_commit(a, 2, 100.0);
    agents::sl_predict(b, obs_of(5));
    agents::agent_commit(b, 7, 0.0);
    EXPECT_NE(agents::sl_predict(a, obs_of(4)), agents::sl_predict(b, obs_of(4)))
        << agents::kind_name(kind);
  }
}

TEST(SlPredict, WrongKindThrows) {
  Agent a = agents::make_agent(spec_for(AgentKind::Dqn), 11);
  EXPECT_THROW(agents::sl_predict(a, obs_of(0)), std::exception);
}

TEST(QValues, WindowOneEqualsFeedForwardOnCurrentObservation) {
  Agent a = agents::make_agent(spec_for(AgentKind::Dqn, 1), 12);
  const Observation o = obs_of(6);
  const Vec q = agents::q_values(a, o);
  EXPECT_EQ(q, numkit::mlp_forward(a.mlp, simworld::encode_observation(a.spec.world, o)));
  EXPECT_EQ(q.size(), 12u);
}

TEST(QValues, MarkovBlindnessOfWindowOne) {
  // action at step t is a function of o_t alone: swap histories, same output
  Agent a = agents::make_agent(spec_for(AgentKind::Dqn, 1), 13);
  Agent b = a;
  agents::q_values(a, obs_of(1));
  agents::q_values(a, obs_of(2));
  agents::q_values(b, obs_of(7));
  EXPECT_EQ(agents::q_values(a, obs_of(3)), agents::q_values(b, obs_of(3)));
}

TEST(QValues, RecurrentQChangesWithHistory) {
  Agent a = agents::make_agent(spec_for(AgentKind::RlRnn), 14);
  Agent b = a;
  agents::q_values(a, obs_of(1));
  agents::agent_commit(a, 3, 50.0);
  agents::q_values(b, obs_of(6));
  agents::agent_commit(b, 8, 0.0);
  EXPECT_NE(agents::q_values(a, obs_of(4)), agents::q_values(b, obs_of(4)));
}

TEST(HybridForward, QHeadZeroedLeavesSlHeadsIntact) {
  Agent a = agents::make_agent(spec_for(AgentKind::HybridRnn), 15);
  Agent zeroed = a;
  for (auto& layer : zeroed.mlp.layers) {
    for (double& w : layer.w.data) w = 0.0;
    for (double& b : layer.b) b = 0.0;
  }
  const auto out_a = agents::hybrid_forward(a, obs_of(2));
  const auto out_z = agents::hybrid_forward(zeroed, obs_of(2));
  for (double q : out_z.q) EXPECT_DOUBLE_EQ(q, 0.0);
  EXPECT_EQ(out_z.reward, out_a.reward);
  EXPECT_EQ(out_z.obs_logits.size(), out_a.obs_logits.size());
  for (std::size_t d = 0; d < out_a.obs_logits.size(); ++d)
    EXPECT_EQ(out_z.obs_logits[d], out_a.obs_logits[d]);
}

TEST(HybridForward, ShapesAndSoftmaxNormalization) {
  Agent a = agents::make_agent(spec_for(AgentKind::HybridLstm), 16);
  const auto out = agents::hybrid_forward(a, obs_of(1));
  EXPECT_EQ(out.q.size(), 12u);
  EXPECT_EQ(out.reward.size(), 12u);
  ASSERT_EQ(out.obs_logits.size(), static_cast<std::size_t>(simworld::kNumDims));
  for (int d = 0; d < simworld::kNumDims; ++d) {
    EXPECT_EQ(out.obs_logits[static_cast<std::size_t>(d)].size(),
              static_cast<std::size_t>(a.spec.world.cardinalities[d]));
    double z = 0.0;
    for (double logit : out.obs_logits[static_cast<std::size_t>(d)]) z += std::exp(logit);
    double total = 0.0;
    for (double logit : out.obs_logits[static_cast<std::size_t>(d)]) total += std::exp(logit) / z;
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(HybridForward, CoreStateFlowsIntoQHead) {
  Agent a = agents::make_agent(spec_for(AgentKind::HybridRnn), 17);
  Agent perturbed = a;
  perturbed.rnn.b[0] += 0.25;
  const auto qa = agents::hybrid_forward(a, obs_of(3)).q;
  const auto qb = agents::hybrid_forward(perturbed, obs_of(3)).q;
  EXPECT_NE(qa, qb);
}

TEST(HybridForward, QHeadInputDimensionEqualsHiddenSize) {
  const Agent a = agents::make_agent(spec_for(AgentKind::HybridRnn), 18);
  EXPECT_EQ(a.mlp.layers.front().in_dim(), a.spec.hidden);
}

TEST(GreedyAction, AscendingValuesPickLast) {
  Vec v(12);
  for (int i = 0; i < 12; ++i) v[static_cast<std::size_t>(i)] = i + 1.0;
  EXPECT_EQ(agents::greedy_action(v), 11);
}

TEST(GreedyAction, TiesBreakTowardLowestIndex) {
  EXPECT_EQ(agents::greedy_action(Vec(12, 3.25)), 0);
}

TEST(GreedyAction, InvariantUnderPositiveAffineTransform) {
  Rng rng(19);
  for (int trial = 0; trial < 50; ++trial) {
    Vec v(12);
    for (double& x : v) x = rng.uniform(-5, 5);
    const double alpha = rng.uniform(0.1, 4.0);
    const double beta = rng.uniform(-10, 10);
    Vec w(12);
    for (int i = 0; i < 12; ++i) w[static_cast<std::size_t>(i)] = alpha * v[static_cast<std::size_t>(i)] + beta;
    EXPECT_EQ(agents::greedy_action(v), agents::greedy_action(w));
  }
}

TEST(GreedyAction, NonFiniteValuesThrow) {
  Vec v(12, 0.0);
  v[3] = std::nan("");
  EXPECT_THROW(agents::greedy_action(v), std::exception);
  v[3] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(agents::greedy_action(v), std::exception);
}

TEST(Checkpoint, JsonRoundTripIsBitExact) {
  for (const AgentKind kind :
       {AgentKind::SlDnn, AgentKind::SlLstm, AgentKind::Dqn, AgentKind::HybridRnn}) {
    Agent a = agents::make_agent(spec_for(kind, kind == AgentKind::Dqn ? 2 : 1), 20);
    a.steps_seen = 17;
    const std::string text = agents::agent_to_json(a);
    const Agent b = agents::agent_from_json(text);
    EXPECT_EQ(agents::flatten_params(a), agents::flatten_params(b));
    EXPECT_EQ(b.spec.kind, a.spec.kind);
    EXPECT_EQ(b.spec.window, a.spec.window);
    EXPECT_EQ(b.steps_seen, 17);
    EXPECT_EQ(agents::agent_to_json(b), text);
  }
}

TEST(Checkpoint, FileRoundTrip) {
  namespace fs = std::filesystem;
  const auto path = fs::temp_directory_path() / "agent_ckpt_test.json";
  Agent a = agents::make_agent(spec_for(AgentKind::RlLstm), 21);
  agents::save_checkpoint(a, path.string());
  const Agent b = agents::load_checkpoint(path.string());
  EXPECT_EQ(agents::flatten_params(a), agents::flatten_params(b));
  fs::remove(path);
}

TEST(ForwardDeterminism, SameStateSameInputSameOutput) {
  for (const AgentKind kind : {AgentKind::SlRnn, AgentKind::RlLstm, AgentKind::HybridLstm}) {
    Agent a = agents::make_agent(spec_for(kind), 22);
    Agent b = a;
    EXPECT_EQ(agents::policy_values(a, obs_of(5)), agents::policy_values(b, obs_of(5)));
  }
}

TEST(FlatParams, CountMatchesComponentSum) {
  const Agent a = agents::make_agent(spec_for(AgentKind::HybridLstm), 23);
  const auto flat = agents::flatten_params(a);
  const std::size_t expected = numkit::param_count(a.mlp) + numkit::param_count(a.lstm) +
                               numkit::param_count(a.out_head) +
                               numkit::param_count(a.obs_head) + numkit::param_count(a.rnn);
  EXPECT_EQ(flat.size(), expected);
}
