#include "rrl/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

#include <boost/math/distributions/students_t.hpp>

#include "rrl/parallel.hpp"

namespace rrl::evalkit {

namespace {

using simworld::kHorizonSteps;

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

struct EpisodeOutcome {
  double total_reward = 0.0;
  double discounted_return = 0.0;
};

EpisodeOutcome run_episode(const SimulatorSpec& sim, const simworld::RolloutPolicy& policy,
                           std::uint64_t seed, double gamma) {
  Rng rng(seed);
  if (policy.reset) policy.reset();
  simworld::SimState state = simworld::sim_reset(sim, rng);
  EpisodeOutcome outcome;
  double discount = 1.0;
  while (!state.done) {
    const int action = policy.act(state.obs, rng);
    const auto step = simworld::sim_step(sim, state, action, rng);
    if (policy.commit) policy.commit(action, step.reward);
    outcome.total_reward += step.reward;
    outcome.discounted_return += discount * step.reward;
    discount *= gamma;
  }
  return outcome;
}

EvalResult aggregate(const std::vector<EpisodeOutcome>& outcomes) {
  EvalResult result;
  result.n_episodes = static_cast<int>(outcomes.size());
  double total = 0.0, discounted = 0.0;
  for (const auto& o : outcomes) {
    total += o.total_reward;
    discounted += o.discounted_return;
  }
  result.mean_per_step_reward =
      total / (static_cast<double>(outcomes.size()) * kHorizonSteps);
  result.mean_discounted_return = discounted / static_cast<double>(outcomes.size());
  return result;
}

}  // namespace

EvalResult evaluate_policy(const SimulatorSpec& sim, const Agent& agent, int n_episodes,
                           std::uint64_t seed, double gamma) {
  if (n_episodes < 1) fail("evaluate_policy: need at least one episode");
  const auto n = static_cast<std::size_t>(n_episodes);
  std::vector<EpisodeOutcome> outcomes(n);
  const unsigned threads = std::thread::hardware_concurrency();
  // One agent copy per worker slot keeps episode state private.
  parallel_for(
      n,
      [&](std::size_t e) {
        Agent copy = agent;
        const auto policy = agents::greedy_rollout_policy(copy);
        outcomes[e] = run_episode(sim, policy, Rng::derive(seed, e), gamma);
      },
      threads);
  return aggregate(outcomes);
}

EvalResult evaluate_rollout_policy(const SimulatorSpec& sim,
                                   const simworld::RolloutPolicy& policy, int n_episodes,
                                   std::uint64_t seed, double gamma) {
  if (n_episodes < 1) fail("evaluate_rollout_policy: need at least one episode");
  std::vector<EpisodeOutcome> outcomes(static_cast<std::size_t>(n_episodes));
  for (std::size_t e = 0; e < outcomes.size(); ++e)
    outcomes[e] = run_episode(sim, policy, Rng::derive(seed, e), gamma);
  return aggregate(outcomes);
}

double mean_of(std::span<const double> xs) {
  if (xs.empty()) fail("mean_of: empty sample");
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double stddev_of(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean_of(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

double significance_test(std::span<const double> runs_a, std::span<const double> runs_b) {
  if (runs_a.size() < 5 || runs_b.size() < 5)
    fail("significance_test: need at least 5 runs per side");
  const double na = static_cast<double>(runs_a.size());
  const double nb = static_cast<double>(runs_b.size());
  const double ma = mean_of(runs_a);
  const double mb = mean_of(runs_b);
  const double sa = stddev_of(runs_a);
  const double sb = stddev_of(runs_b);
  const double va = sa * sa / na;
  const double vb = sb * sb / nb;
  if (va + vb == 0.0) return ma == mb ? 1.0 : 0.0;
  const double t = (ma - mb) / std::sqrt(va + vb);
  // Welch-Satterthwaite degrees of freedom
  const double df = (va + vb) * (va + vb) /
                    (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
  const boost::math::students_t dist(df);
  return 2.0 * boost::math::cdf(dist, -std::abs(t));
}

// ---------------------------------------------------------------------------
// SAME/DEVIATED

SameDeviatedResult same_deviated_eval(const ReplayPolicy& policy, const Dataset& test) {
  if (test.trajectories.empty()) fail("same_deviated_eval: empty test set");
  SameDeviatedResult result;
  double same_total = 0.0, deviated_total = 0.0;
  for (const auto& traj : test.trajectories) {
    for (int t = 0; t < kHorizonSteps; ++t) {
      const int proposed = policy(traj, t);
      const int logged = traj.actions[static_cast<std::size_t>(t)];
      const double reward = traj.rewards[static_cast<std::size_t>(t)];
      if (proposed == logged) {
        ++result.same_count;
        same_total += reward;
      } else {
        ++result.deviated_count;
        deviated_total += reward;
      }
    }
  }
  if (result.same_count > 0)
    result.same_mean = same_total / static_cast<double>(result.same_count);
  if (result.deviated_count > 0)
    result.deviated_mean = deviated_total / static_cast<double>(result.deviated_count);
  return result;
}

ReplayPolicy replay_policy_for(const Agent& agent) {
  // The shared state is rebuilt from scratch whenever the query is not the
  // next step of the same trajectory, so the agent always sees exactly the
  // logged history.
  struct ReplayState {
    Agent agent;
    const Trajectory* traj = nullptr;
    int next_t = 0;
  };
  auto state = std::make_shared<ReplayState>(ReplayState{agent, nullptr, 0});
  return [state](const Trajectory& traj, int t) {
    if (state->traj != &traj || state->next_t > t) {
      state->traj = &traj;
      state->next_t = 0;
      agents::agent_reset(state->agent);
    }
    int proposed = -1;
    while (state->next_t <= t) {
      const int step = state->next_t;
      const Vec values = agents::policy_values(
          state->agent, traj.observations[static_cast<std::size_t>(step)]);
      proposed = agents::greedy_action(values);
      // the logged action/reward drive the state, not the proposal
      agents::agent_commit(state->agent, traj.actions[static_cast<std::size_t>(step)],
                           traj.rewards[static_cast<std::size_t>(step)]);
      ++state->next_t;
    }
    return proposed;
  };
}

SameDeviatedResult same_deviated_eval(const Agent& agent, const Dataset& test) {
  return same_deviated_eval(replay_policy_for(agent), test);
}

// ---------------------------------------------------------------------------
// Curves and reports

std::vector<CurvePoint> assemble_learning_curve(std::span<const trainers::TrainLog> logs) {
  if (logs.empty()) fail("assemble_learning_curve: no logs");
  std::vector<int> schedule;
  for (const auto& rec : logs.front().records)
    if (rec.eval_reward) schedule.push_back(rec.iteration);
  if (schedule.empty()) fail("assemble_learning_curve: logs carry no eval checkpoints");

  std::vector<std::vector<double>> values(schedule.size());
  for (const auto& log : logs) {
    std::size_t k = 0;
    for (const auto& rec : log.records) {
      if (!rec.eval_reward) continue;
      if (k >= schedule.size() || rec.iteration != schedule[k])
        fail("assemble_learning_curve: checkpoint schedules differ");
      values[k].push_back(*rec.eval_reward);
      ++k;
    }
    if (k != schedule.size()) fail("assemble_learning_curve: checkpoint schedules differ");
  }

  std::vector<CurvePoint> curve(schedule.size());
  for (std::size_t k = 0; k < schedule.size(); ++k) {
    curve[k].iteration = schedule[k];
    curve[k].mean = mean_of(values[k]);
    curve[k].stddev = stddev_of(values[k]);
    curve[k].n = static_cast<int>(values[k].size());
  }
  return curve;
}

EvalReport build_report(const std::string& policy, std::int64_t data_size,
                        const std::vector<ModelStats>& models) {
  EvalReport report;
  report.policy = policy;
  report.data_size = data_size;
  report.models = models;
  for (auto& m : report.models) {
    m.mean = mean_of(m.runs);
    m.stddev = stddev_of(m.runs);
  }
  for (std::size_t i = 0; i < report.models.size(); ++i)
    for (std::size_t j = 0; j < report.models.size(); ++j) {
      if (i == j) continue;
      const auto& a = report.models[i];
      const auto& b = report.models[j];
      if (a.runs.size() >= 5 && b.runs.size() >= 5)
        report.p_values[{a.model, b.model}] = significance_test(a.runs, b.runs);
    }
  return report;
}

}  // namespace rrl::evalkit
