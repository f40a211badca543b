#include <benchmark/benchmark.h>

#include "rrl/agents.hpp"
#include "rrl/numkit.hpp"
#include "rrl/simworld.hpp"

using namespace rrl;
using numkit::Vec;

namespace {

Vec random_vec(Rng& rng, int dim) {
  Vec x(static_cast<std::size_t>(dim));
  for (double& v : x) v = rng.uniform(-1, 1);
  return x;
}

void BM_DenseForward(benchmark::State& state) {
  Rng rng(1);
  const auto layer = numkit::make_dense(static_cast<int>(state.range(0)), 64,
                                        numkit::Activation::Relu, rng);
  const Vec x = random_vec(rng, static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(numkit::dense_forward(layer, x));
}
BENCHMARK(BM_DenseForward)->Arg(44)->Arg(132);

void BM_RnnStep(benchmark::State& state) {
  Rng rng(2);
  const auto cell = numkit::make_rnn(57, static_cast<int>(state.range(0)), rng);
  const Vec x = random_vec(rng, 57);
  Vec h(static_cast<std::size_t>(state.range(0)), 0.0);
  for (auto _ : state) benchmark::DoNotOptimize(h = numkit::rnn_step(cell, x, h));
}
BENCHMARK(BM_RnnStep)->Arg(32)->Arg(64);

void BM_LstmStep(benchmark::State& state) {
  Rng rng(3);
  const auto cell = numkit::make_lstm(57, static_cast<int>(state.range(0)), rng);
  const Vec x = random_vec(rng, 57);
  numkit::LstmState s{Vec(static_cast<std::size_t>(state.range(0)), 0.0),
                      Vec(static_cast<std::size_t>(state.range(0)), 0.0)};
  for (auto _ : state) benchmark::DoNotOptimize(s = numkit::lstm_step(cell, x, s));
}
BENCHMARK(BM_LstmStep)->Arg(32)->Arg(64);

// full 22-step unroll with backward pass, the inner loop of every recurrent
// training iteration
void BM_RnnBptt22(benchmark::State& state) {
  Rng rng(4);
  simworld::WorldConfig config;
  agents::AgentSpec spec;
  spec.kind = agents::AgentKind::RlRnn;
  spec.world = config;
  agents::Agent agent = agents::make_agent(spec, 5);
  std::vector<Vec> inputs(simworld::kHorizonSteps);
  for (auto& x : inputs) x = random_vec(rng, config.enc_dim());
  for (auto _ : state) {
    agents::AgentGrads grads = agents::make_grads(agent);
    agents::CoreTape tape;
    const auto h = agents::core_unroll(agent, inputs, &tape);
    std::vector<Vec> dh(h.size());
    for (std::size_t t = 0; t < h.size(); ++t) dh[t] = Vec(h[t].size(), 0.1);
    agents::core_backward(agent, tape, dh, grads);
    benchmark::DoNotOptimize(grads);
  }
}
BENCHMARK(BM_RnnBptt22);

void BM_LstmBptt22(benchmark::State& state) {
  Rng rng(6);
  simworld::WorldConfig config;
  agents::AgentSpec spec;
  spec.kind = agents::AgentKind::RlLstm;
  spec.world = config;
  agents::Agent agent = agents::make_agent(spec, 7);
  std::vector<Vec> inputs(simworld::kHorizonSteps);
  for (auto& x : inputs) x = random_vec(rng, config.enc_dim());
  for (auto _ : state) {
    agents::AgentGrads grads = agents::make_grads(agent);
    agents::CoreTape tape;
    const auto h = agents::core_unroll(agent, inputs, &tape);
    std::vector<Vec> dh(h.size());
    for (std::size_t t = 0; t < h.size(); ++t) dh[t] = Vec(h[t].size(), 0.1);
    agents::core_backward(agent, tape, dh, grads);
    benchmark::DoNotOptimize(grads);
  }
}
BENCHMARK(BM_LstmBptt22);

}  // namespace
