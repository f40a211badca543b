#include <benchmark/benchmark.h>

#include "rrl/simworld.hpp"

using namespace rrl;
using simworld::BehaviorPolicy;
using simworld::WorldConfig;

namespace {

void BM_SimStep(benchmark::State& state) {
  WorldConfig config;
  const auto world = simworld::random_world(config, 11);
  Rng rng(12);
  auto sim_state = simworld::sim_reset(world, rng);
  for (auto _ : state) {
    if (sim_state.done) sim_state = simworld::sim_reset(world, rng);
    benchmark::DoNotOptimize(simworld::sim_step(world, sim_state, rng.uniform_int(12), rng));
  }
}
BENCHMARK(BM_SimStep);

void BM_GenerateEpisode(benchmark::State& state) {
  WorldConfig config;
  const auto world = simworld::random_world(config, 13);
  std::uint64_t seed = 0;
  for (auto _ : state)
    benchmark::DoNotOptimize(
        simworld::generate_dataset(world, BehaviorPolicy::uniform(), 22, ++seed));
}
BENCHMARK(BM_GenerateEpisode);

void BM_FitObservationTables(benchmark::State& state) {
  WorldConfig config;
  const auto world = simworld::random_world(config, 14);
  const auto data = simworld::generate_dataset(world, BehaviorPolicy::uniform(),
                                               state.range(0), 15);
  for (auto _ : state)
    benchmark::DoNotOptimize(simworld::fit_observation_tables(data, config, 0.1));
}
BENCHMARK(BM_FitObservationTables)->Arg(10000)->Arg(50000);

void BM_EncodeStep(benchmark::State& state) {
  WorldConfig config;
  simworld::Observation obs{3, 1, 4, 2, 7};
  numkit::Vec out;
  for (auto _ : state) {
    simworld::encode_step_into(config, obs, 5, 120.0, out);
    benchmark::DoNotOptimize(out);
  }
}
BENCHMARK(BM_EncodeStep);

}  // namespace
