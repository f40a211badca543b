#include "rrl/xctl.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "rrl/agents.hpp"
#include "rrl/parallel.hpp"

namespace rrl::xctl {

namespace fs = std::filesystem;
using nlohmann::json;
using agents::Agent;
using agents::AgentKind;
using agents::AgentSpec;
using numkit::Vec;
using simworld::BehaviorPolicy;
using simworld::Dataset;
using simworld::SimulatorSpec;
using trainers::Hyperparams;
using trainers::TrainLog;

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) fail("format_double: conversion failed");
  return std::string(buf, ptr);
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (const unsigned char c : text) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

std::uint64_t string_stream_id(const std::string& text) { return fnv1a(text); }

}  // namespace

const std::vector<std::string>& model_names() {
  static const std::vector<std::string> names = {
      "sl_dnn",     "sl_rnn",     "sl_lstm",        "dqn",
      "rl_rnn",     "rl_lstm",    "hybrid_rnn",     "hybrid_lstm",
      "hybrid_rnn_sep", "hybrid_lstm_sep"};
  return names;
}

bool is_known_model(const std::string& name) {
  const auto& names = model_names();
  return std::find(names.begin(), names.end(), name) != names.end();
}

ExperimentConfig preset(const std::string& name) {
  ExperimentConfig config;
  config.experiment_id = name;
  config.models = {"sl_dnn", "sl_rnn",  "sl_lstm",    "dqn",
                   "rl_rnn", "rl_lstm", "hybrid_rnn", "hybrid_lstm"};
  config.seeds = {1, 2, 3, 4, 5};
  config.hyper.gamma = 0.9;
  if (name == "E1") {
    config.policies = {"M"};
    config.data_sizes = {100000};
  } else if (name == "E2") {
    config.policies = {"U", "M", "R"};
    config.data_sizes = {100000};
  } else if (name == "E3") {
    config.policies = {"M"};
    config.data_sizes = {50000, 100000, 200000, 500000};
  } else {
    fail("preset: unknown preset '" + name + "' (expected E1, E2 or E3)");
  }
  config.out_dir = "out/" + name;
  return config;
}

std::vector<std::string> validate_config(const ExperimentConfig& config) {
  std::vector<std::string> violations;
  const auto add = [&](const std::string& v) { violations.push_back(v); };

  if (config.policies.empty()) add("policies: must not be empty");
  for (const auto& p : config.policies)
    if (p != "U" && p != "M" && p != "R") add("policies: unknown policy '" + p + "'");
  if (config.data_sizes.empty()) add("data_sizes: must not be empty");
  for (const auto s : config.data_sizes)
    if (s < simworld::kHorizonSteps * 6)
      add("data_sizes: " + std::to_string(s) + " too small for a 4:1:1 donor split");
  if (config.models.empty()) add("models: must not be empty");
  for (const auto& m : config.models)
    if (!is_known_model(m)) add("models: unknown model '" + m + "'");
  if (config.seeds.empty()) add("seeds: must not be empty");
  {
    std::set<std::uint64_t> unique(config.seeds.begin(), config.seeds.end());
    if (unique.size() != config.seeds.size()) add("seeds: duplicate entries");
  }
  if (config.significance && config.seeds.size() < 5)
    add("seeds: significance requires at least 5 seeds");
  if (!(config.hyper.gamma > 0.0 && config.hyper.gamma < 1.0))
    add("hyper.gamma: discount out of (0,1)");
  for (const double eta : {config.eta_sl, config.eta_rl, config.eta_hybrid, config.eta_hybrid_q})
    if (!(eta > 0.0)) add("hyper.eta: step sizes must be positive");
  if (config.hyper.target_sync < 1) add("hyper.target_sync: must be >= 1");
  if (config.hyper.minibatch < 1) add("hyper.minibatch: must be >= 1");
  if (config.hyper.iterations < 0) add("hyper.iterations: must be >= 0");
  if (!(config.hyper.reward_scale > 0.0)) add("hyper.reward_scale: must be positive");
  if (config.agent_hidden < 1) add("agent_hidden: must be >= 1");
  if (config.agent_mlp_hidden < 1) add("agent_mlp_hidden: must be >= 1");
  if (config.eval_episodes < 1) add("eval_episodes: must be >= 1");
  if (config.curve_points < 0) add("curve_points: must be >= 0");
  if (config.curve_points > 0 && config.curve_episodes < 1)
    add("curve_episodes: must be >= 1 when curves are enabled");
  if (config.world_source != "random" && config.world_source != "file")
    add("world_source: must be 'random' or 'file'");
  if (config.world_source == "file" && config.world_file.empty())
    add("world_file: required when world_source is 'file'");
  for (int c : config.world.cardinalities)
    if (c < 2) add("world.cardinalities: every dimension needs cardinality >= 2");
  if (config.out_dir.empty()) add("out_dir: must not be empty");
  return violations;
}

std::string config_to_json(const ExperimentConfig& config) {
  json j;
  j["experiment_id"] = config.experiment_id;
  j["policies"] = config.policies;
  j["data_sizes"] = config.data_sizes;
  j["models"] = config.models;
  j["seeds"] = config.seeds;
  j["world"] = {{"cardinalities", config.world.cardinalities},
                {"source", config.world_source},
                {"file", config.world_file},
                {"seed", config.world_seed}};
  j["agent"] = {{"hidden", config.agent_hidden}, {"mlp_hidden", config.agent_mlp_hidden}};
  json hyper = {{"gamma", config.hyper.gamma},
                {"eta_sl", config.eta_sl},
                {"eta_rl", config.eta_rl},
                {"eta_hybrid", config.eta_hybrid},
                {"eta_hybrid_q", config.eta_hybrid_q},
                {"minibatch", config.hyper.minibatch},
                {"iterations", config.hyper.iterations},
                {"target_sync", config.hyper.target_sync},
                {"reward_scale", config.hyper.reward_scale},
                {"sl_obs_weight", config.hyper.sl_obs_weight},
                {"sl_reward_weight", config.hyper.sl_reward_weight},
                {"phase1_max_iterations", config.hyper.phase1_max_iterations},
                {"phase1_check_every", config.hyper.phase1_check_every},
                {"phase1_patience", config.hyper.phase1_patience}};
  hyper["tau"] = config.hyper.tau ? json(*config.hyper.tau) : json(nullptr);
  j["hyper"] = std::move(hyper);
  j["eval_episodes"] = config.eval_episodes;
  j["curve_points"] = config.curve_points;
  j["curve_episodes"] = config.curve_episodes;
  j["significance"] = config.significance;
  j["out_dir"] = config.out_dir;
  j["jobs"] = config.jobs;
  return j.dump(2);
}

ExperimentConfig config_from_json(const std::string& json_text) {
  const json j = json::parse(json_text);
  ExperimentConfig config;
  config.experiment_id = j.value("experiment_id", std::string("custom"));
  config.policies = j.at("policies").get<std::vector<std::string>>();
  config.data_sizes = j.at("data_sizes").get<std::vector<std::int64_t>>();
  config.models = j.at("models").get<std::vector<std::string>>();
  config.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("world")) {
    const auto& w = j.at("world");
    if (w.contains("cardinalities"))
      config.world.cardinalities =
          w.at("cardinalities").get<std::array<int, simworld::kNumDims>>();
    config.world_source = w.value("source", std::string("random"));
    config.world_file = w.value("file", std::string());
    config.world_seed = w.value("seed", kDefaultWorldSeed);
  }
  if (j.contains("agent")) {
    config.agent_hidden = j.at("agent").value("hidden", 32);
    config.agent_mlp_hidden = j.at("agent").value("mlp_hidden", 64);
  }
  if (j.contains("hyper")) {
    const auto& h = j.at("hyper");
    config.hyper.gamma = h.value("gamma", 0.9);
    config.eta_sl = h.value("eta_sl", config.eta_sl);
    config.eta_rl = h.value("eta_rl", config.eta_rl);
    config.eta_hybrid = h.value("eta_hybrid", config.eta_hybrid);
    config.eta_hybrid_q = h.value("eta_hybrid_q", config.eta_hybrid_q);
    if (h.contains("tau") && !h.at("tau").is_null())
      config.hyper.tau = h.at("tau").get<double>();
    config.hyper.minibatch = h.value("minibatch", config.hyper.minibatch);
    config.hyper.iterations = h.value("iterations", config.hyper.iterations);
    config.hyper.target_sync = h.value("target_sync", config.hyper.target_sync);
    config.hyper.reward_scale = h.value("reward_scale", config.hyper.reward_scale);
    config.hyper.sl_obs_weight = h.value("sl_obs_weight", config.hyper.sl_obs_weight);
    config.hyper.sl_reward_weight = h.value("sl_reward_weight", config.hyper.sl_reward_weight);
    config.hyper.phase1_max_iterations =
        h.value("phase1_max_iterations", config.hyper.phase1_max_iterations);
    config.hyper.phase1_check_every =
        h.value("phase1_check_every", config.hyper.phase1_check_every);
    config.hyper.phase1_patience = h.value("phase1_patience", config.hyper.phase1_patience);
  }
  config.eval_episodes = j.value("eval_episodes", 2000);
  config.curve_points = j.value("curve_points", 10);
  config.curve_episodes = j.value("curve_episodes", 200);
  config.significance = j.value("significance", true);
  config.out_dir = j.value("out_dir", std::string("out"));
  config.jobs = j.value("jobs", 0);
  return config;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("load_config: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return config_from_json(buf.str());
}

void save_config(const ExperimentConfig& config, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail("save_config: cannot open " + path);
  out << config_to_json(config) << "\n";
  if (!out) fail("save_config: write failed for " + path);
}

std::string RunKey::to_string() const {
  return model + "_" + policy + "_" + std::to_string(data_size) + "_s" + std::to_string(seed);
}

// ---------------------------------------------------------------------------
// Experiment runner

namespace {

struct CurveSample {
  int iteration = 0;
  double value = 0.0;
};

struct RunResult {
  RunKey key;
  double avg_reward = 0.0;
  double discounted_return = 0.0;
  int dqn_window = 0;  // 0 when not a DQN run
  std::vector<CurveSample> curve;
  double duration_seconds = 0.0;
};

json run_result_to_json(const RunResult& r, std::uint64_t config_hash) {
  json j;
  j["config_hash"] = config_hash;
  j["model"] = r.key.model;
  j["policy"] = r.key.policy;
  j["data_size"] = r.key.data_size;
  j["seed"] = r.key.seed;
  j["avg_reward"] = r.avg_reward;
  j["discounted_return"] = r.discounted_return;
  j["dqn_window"] = r.dqn_window;
  j["duration_seconds"] = r.duration_seconds;
  json curve = json::array();
  for (const auto& c : r.curve) curve.push_back({{"iteration", c.iteration}, {"value", c.value}});
  j["curve"] = std::move(curve);
  return j;
}

RunResult run_result_from_json(const json& j) {
  RunResult r;
  r.key.model = j.at("model").get<std::string>();
  r.key.policy = j.at("policy").get<std::string>();
  r.key.data_size = j.at("data_size").get<std::int64_t>();
  r.key.seed = j.at("seed").get<std::uint64_t>();
  r.avg_reward = j.at("avg_reward").get<double>();
  r.discounted_return = j.at("discounted_return").get<double>();
  r.dqn_window = j.at("dqn_window").get<int>();
  r.duration_seconds = j.at("duration_seconds").get<double>();
  for (const auto& c : j.at("curve"))
    r.curve.push_back({c.at("iteration").get<int>(), c.at("value").get<double>()});
  return r;
}

// Deterministic per-step action schedule standing in for the raw log's
// data-collection policy: like the original campaign data, the same action is
// applied to every donor at a given step, so the log carries no exploration.
// Every action appears at least once (a campaign uses each mailing type), so
// the frequency-matching policy M has full support.
std::vector<int> raw_schedule(std::uint64_t world_seed) {
  std::vector<int> schedule(simworld::kHorizonSteps);
  Rng rng(Rng::derive(world_seed, 0x5C0));
  for (int a = 0; a < simworld::kNumActions; ++a) schedule[static_cast<std::size_t>(a)] = a;
  for (int i = simworld::kNumActions - 1; i > 0; --i) {
    const int j = rng.uniform_int(i + 1);
    std::swap(schedule[static_cast<std::size_t>(i)], schedule[static_cast<std::size_t>(j)]);
  }
  for (int t = simworld::kNumActions; t < simworld::kHorizonSteps; ++t)
    schedule[static_cast<std::size_t>(t)] = rng.uniform_int(simworld::kNumActions);
  return schedule;
}

BehaviorPolicy schedule_policy(const std::vector<int>& schedule, int& step_state) {
  simworld::RolloutPolicy rollout;
  rollout.reset = [&step_state] { step_state = 0; };
  rollout.act = [&schedule, &step_state](const simworld::Observation&, Rng&) {
    return schedule[static_cast<std::size_t>(step_state)];
  };
  rollout.commit = [&step_state](int, double) { ++step_state; };
  return BehaviorPolicy::greedy_policy(std::move(rollout));
}

struct JobContext {
  const ExperimentConfig* config = nullptr;
  const SimulatorSpec* world = nullptr;
  const std::map<std::int64_t, Dataset>* raw_logs = nullptr;  // per data size
  std::uint64_t config_hash = 0;
  fs::path runs_dir;
  fs::path checkpoints_dir;
};

AgentSpec agent_spec_for(const ExperimentConfig& config, AgentKind kind, int window = 1) {
  AgentSpec spec;
  spec.kind = kind;
  spec.world = config.world;
  spec.window = window;
  spec.hidden = config.agent_hidden;
  spec.mlp_hidden = config.agent_mlp_hidden;
  return spec;
}

trainers::EvalHook make_curve_hook(const JobContext& ctx, std::uint64_t eval_seed,
                                   std::vector<CurveSample>& samples) {
  trainers::EvalHook hook;
  const int iterations = ctx.config->hyper.iterations;
  const int points = ctx.config->curve_points;
  hook.every = points > 0 ? std::max(1, iterations / points) : 0;
  hook.fn = [&ctx, eval_seed, &samples](const Agent& agent) {
    const auto result = evalkit::evaluate_policy(*ctx.world, agent,
                                                 ctx.config->curve_episodes, eval_seed,
                                                 ctx.config->hyper.gamma);
    samples.push_back({0, result.mean_per_step_reward});
    return result.mean_per_step_reward;
  };
  return hook;
}

RunResult execute_job(const JobContext& ctx, const RunKey& key) {
  const auto start = std::chrono::steady_clock::now();
  const ExperimentConfig& config = *ctx.config;
  const SimulatorSpec& world = *ctx.world;

  // One dataset per (policy, size, seed), shared by every model.
  const std::uint64_t data_seed =
      Rng::derive(key.seed, string_stream_id("data_" + key.policy + "_" +
                                            std::to_string(key.data_size)));
  Dataset data;
  if (key.policy == "U") {
    data = simworld::generate_dataset(world, BehaviorPolicy::uniform(), key.data_size,
                                      data_seed);
  } else if (key.policy == "M") {
    data = simworld::generate_dataset(
        world, BehaviorPolicy::matching_from(ctx.raw_logs->at(key.data_size)), key.data_size,
        data_seed);
  } else if (key.policy == "R") {
    data = simworld::generate_dataset(
        world, BehaviorPolicy::replay(ctx.raw_logs->at(key.data_size)), key.data_size,
        data_seed);
  } else {
    fail("execute_job: unknown policy " + key.policy);
  }
  const auto splits = simworld::split_dataset(data, Rng::derive(data_seed, 1));

  Hyperparams hp = config.hyper;
  if (key.model.rfind("sl_", 0) == 0)
    hp.eta = config.eta_sl;
  else if (key.model.rfind("hybrid_", 0) == 0) {
    hp.eta = config.eta_hybrid;
    hp.eta_q = config.eta_hybrid_q;
  } else {
    hp.eta = config.eta_rl;
  }
  hp.seed = Rng::derive(key.seed, string_stream_id("train_" + key.model));
  const std::uint64_t curve_seed = Rng::derive(key.seed, string_stream_id("curve"));
  const std::uint64_t select_seed = Rng::derive(key.seed, string_stream_id("select"));
  // The final evaluation seed is shared across models of the same run seed,
  // so model comparisons use common random numbers.
  const std::uint64_t eval_seed = Rng::derive(key.seed, string_stream_id("eval"));

  RunResult result;
  result.key = key;
  std::vector<CurveSample> samples;
  trainers::EvalHook hook = make_curve_hook(ctx, curve_seed, samples);
  const trainers::EvalHook* hook_ptr = hook.every > 0 ? &hook : nullptr;

  Agent agent;
  TrainLog log;
  if (key.model == "sl_dnn" || key.model == "sl_rnn" || key.model == "sl_lstm") {
    agent = agents::make_agent(agent_spec_for(config, agents::kind_from_name(key.model)),
                               hp.seed);
    log = trainers::train_sl(agent, splits.train, hp, hook_ptr);
  } else if (key.model == "rl_rnn" || key.model == "rl_lstm") {
    agent = agents::make_agent(agent_spec_for(config, agents::kind_from_name(key.model)),
                               hp.seed);
    log = trainers::train_rl(agent, splits.train, hp, hook_ptr);
  } else if (key.model == "dqn") {
    // best window in {1,2,3} by a validation-seeded rollout
    double best_score = -std::numeric_limits<double>::infinity();
    for (int w = 1; w <= 3; ++w) {
      Hyperparams hp_w = hp;
      hp_w.seed = Rng::derive(hp.seed, static_cast<std::uint64_t>(w));
      Agent candidate =
          agents::make_agent(agent_spec_for(config, AgentKind::Dqn, w), hp_w.seed);
      std::vector<CurveSample> w_samples;
      trainers::EvalHook w_hook = make_curve_hook(ctx, curve_seed, w_samples);
      const trainers::EvalHook* w_hook_ptr = w_hook.every > 0 ? &w_hook : nullptr;
      TrainLog w_log = trainers::train_rl(candidate, splits.train, hp_w, w_hook_ptr);
      const double score =
          evalkit::evaluate_policy(world, candidate, std::max(200, config.curve_episodes),
                                   select_seed, hp.gamma)
              .mean_per_step_reward;
      if (score > best_score) {
        best_score = score;
        agent = std::move(candidate);
        log = std::move(w_log);
        samples = std::move(w_samples);
        result.dqn_window = w;
      }
    }
  } else if (key.model == "hybrid_rnn" || key.model == "hybrid_lstm") {
    const auto kind = key.model == "hybrid_rnn" ? AgentKind::HybridRnn : AgentKind::HybridLstm;
    agent = agents::make_agent(agent_spec_for(config, kind), hp.seed);
    log = trainers::train_joint_hybrid(agent, splits.train, hp, hook_ptr);
  } else if (key.model == "hybrid_rnn_sep" || key.model == "hybrid_lstm_sep") {
    const auto kind =
        key.model == "hybrid_rnn_sep" ? AgentKind::HybridRnn : AgentKind::HybridLstm;
    agent = agents::make_agent(agent_spec_for(config, kind), hp.seed);
    log = trainers::train_separate_hybrid(agent, splits.train, splits.valid, hp, hook_ptr);
  } else {
    fail("execute_job: unknown model " + key.model);
  }

  // attach checkpoint iteration indices recorded by the trainer
  {
    std::size_t k = 0;
    for (const auto& rec : log.records)
      if (rec.eval_reward && k < samples.size()) samples[k++].iteration = rec.iteration;
    samples.resize(k);
  }
  result.curve = std::move(samples);

  const auto eval = evalkit::evaluate_policy(world, agent, config.eval_episodes, eval_seed,
                                             config.hyper.gamma);
  result.avg_reward = eval.mean_per_step_reward;
  result.discounted_return = eval.mean_discounted_return;
  result.duration_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  agents::save_checkpoint(agent, (ctx.checkpoints_dir / (key.to_string() + ".json")).string());
  return result;
}

void write_runs_csv(const fs::path& path, const std::vector<RunResult>& results) {
  std::ofstream out(path);
  if (!out) fail("write_runs_csv: cannot open " + path.string());
  out << "model,policy,data_size,seed,avg_reward\n";
  for (const auto& r : results)
    out << r.key.model << ',' << r.key.policy << ',' << r.key.data_size << ',' << r.key.seed
        << ',' << format_double(r.avg_reward) << '\n';
}

void write_summary_csv(const fs::path& path, const ExperimentConfig& config,
                       const std::vector<RunResult>& results) {
  // group runs by (policy, data_size, model)
  std::map<std::pair<std::string, std::int64_t>, std::map<std::string, std::vector<double>>>
      groups;
  std::map<std::pair<std::string, std::int64_t>, std::map<std::string, std::vector<int>>>
      windows;
  for (const auto& r : results) {
    groups[{r.key.policy, r.key.data_size}][r.key.model].push_back(r.avg_reward);
    if (r.dqn_window > 0)
      windows[{r.key.policy, r.key.data_size}][r.key.model].push_back(r.dqn_window);
  }

  std::ofstream out(path);
  if (!out) fail("write_summary_csv: cannot open " + path.string());
  out << "model,policy,data_size,n_runs,mean_reward,std_reward,dqn_window";
  for (const auto& m : config.models) out << ",p_vs_" << m;
  out << "\n";

  for (const auto& policy : config.policies) {
    for (const auto size : config.data_sizes) {
      const auto group_it = groups.find({policy, size});
      if (group_it == groups.end()) continue;
      const auto& by_model = group_it->second;

      std::vector<evalkit::ModelStats> stats;
      for (const auto& m : config.models) {
        const auto it = by_model.find(m);
        if (it == by_model.end()) continue;
        evalkit::ModelStats s;
        s.model = m;
        s.runs = it->second;
        stats.push_back(std::move(s));
      }
      const auto report = evalkit::build_report(policy, size, stats);

      for (const auto& s : report.models) {
        out << s.model << ',' << policy << ',' << size << ',' << s.runs.size() << ','
            << format_double(s.mean) << ',' << format_double(s.stddev) << ',';
        const auto w_it = windows.find({policy, size});
        if (w_it != windows.end() && w_it->second.count(s.model)) {
          // modal selected window
          std::array<int, 4> counts{};
          for (int w : w_it->second.at(s.model)) ++counts[static_cast<std::size_t>(w)];
          int best = 1;
          for (int w = 2; w <= 3; ++w)
            if (counts[static_cast<std::size_t>(w)] > counts[static_cast<std::size_t>(best)])
              best = w;
          out << best;
        }
        for (const auto& m : config.models) {
          out << ',';
          const auto p_it = report.p_values.find({s.model, m});
          if (p_it != report.p_values.end()) out << format_double(p_it->second);
        }
        out << '\n';
      }
    }
  }
}

void write_curves_csv(const fs::path& path, const ExperimentConfig& config,
                      const std::vector<RunResult>& results) {
  // group by (model, policy, size), then average per iteration across seeds
  std::map<std::tuple<std::string, std::string, std::int64_t>,
           std::map<int, std::vector<double>>>
      groups;
  for (const auto& r : results)
    for (const auto& c : r.curve)
      groups[{r.key.model, r.key.policy, r.key.data_size}][c.iteration].push_back(c.value);

  std::ofstream out(path);
  if (!out) fail("write_curves_csv: cannot open " + path.string());
  out << "model,policy,data_size,iteration,mean_eval_reward,std_eval_reward,n\n";
  for (const auto& policy : config.policies)
    for (const auto size : config.data_sizes)
      for (const auto& model : config.models) {
        const auto it = groups.find({model, policy, size});
        if (it == groups.end()) continue;
        for (const auto& [iteration, values] : it->second)
          out << model << ',' << policy << ',' << size << ',' << iteration << ','
              << format_double(evalkit::mean_of(values)) << ','
              << format_double(evalkit::stddev_of(values)) << ',' << values.size() << '\n';
      }
}

}  // namespace

int run_experiment(const ExperimentConfig& config, const std::string& raw_config) {
  const auto violations = validate_config(config);
  if (!violations.empty()) {
    for (const auto& v : violations) fprintf(stderr, "config error: %s\n", v.c_str());
    return 2;
  }

  const fs::path out_dir(config.out_dir);
  const fs::path runs_dir = out_dir / "runs";
  const fs::path checkpoints_dir = out_dir / "checkpoints";
  fs::create_directories(runs_dir);
  fs::create_directories(checkpoints_dir);

  const std::string snapshot = raw_config.empty() ? config_to_json(config) + "\n" : raw_config;
  {
    std::ofstream out(out_dir / "config.snapshot.json", std::ios::binary);
    if (!out) fail("run_experiment: cannot write config snapshot");
    out << snapshot;
  }
  const std::uint64_t config_hash = fnv1a(config_to_json(config));

  // World
  SimulatorSpec world;
  if (config.world_source == "file")
    world = simworld::load_simspec(config.world_file);
  else
    world = simworld::random_world(config.world, config.world_seed);
  simworld::save_simspec(world, (out_dir / "world.json").string());

  // Raw logs per data size: a deterministic per-step schedule generates the
  // stand-in for the original campaign log; M matches its frequencies and R
  // replays it.
  std::map<std::int64_t, Dataset> raw_logs;
  const bool needs_raw =
      std::any_of(config.policies.begin(), config.policies.end(),
                  [](const std::string& p) { return p == "M" || p == "R"; });
  if (needs_raw) {
    const auto schedule = raw_schedule(config.world_seed);
    for (const auto size : config.data_sizes) {
      int step_state = 0;
      const auto policy = schedule_policy(schedule, step_state);
      raw_logs[size] = simworld::generate_dataset(
          world, policy, size, Rng::derive(config.world_seed, string_stream_id(
                                               "raw_" + std::to_string(size))));
    }
  }

  JobContext ctx;
  ctx.config = &config;
  ctx.world = &world;
  ctx.raw_logs = &raw_logs;
  ctx.config_hash = config_hash;
  ctx.runs_dir = runs_dir;
  ctx.checkpoints_dir = checkpoints_dir;

  // Job list in canonical order.
  std::vector<RunKey> keys;
  for (const auto& model : config.models)
    for (const auto& policy : config.policies)
      for (const auto size : config.data_sizes)
        for (const auto seed : config.seeds) keys.push_back({model, policy, size, seed});
  std::sort(keys.begin(), keys.end());

  std::vector<RunResult> results(keys.size());
  std::vector<int> status(keys.size(), 0);  // 0 ok, 1 failed
  std::vector<std::string> errors(keys.size());
  std::mutex io_mutex;

  const auto run_one = [&](std::size_t i) {
    const RunKey& key = keys[i];
    const fs::path run_file = runs_dir / (key.to_string() + ".json");
    try {
      if (fs::exists(run_file)) {
        std::ifstream in(run_file);
        json j;
        in >> j;
        if (j.value("config_hash", std::uint64_t{0}) == config_hash) {
          results[i] = run_result_from_json(j);
          return;  // completed on a previous invocation
        }
      }
      RunResult result = execute_job(ctx, key);
      {
        std::lock_guard lock(io_mutex);
        std::ofstream out(run_file);
        out << run_result_to_json(result, config_hash).dump(2) << "\n";
      }
      results[i] = std::move(result);
    } catch (const std::exception& e) {
      status[i] = 1;
      errors[i] = e.what();
      std::lock_guard lock(io_mutex);
      std::ofstream out(runs_dir / (key.to_string() + ".error.txt"));
      out << e.what() << "\n";
    }
  };

  const unsigned workers =
      config.jobs > 0 ? static_cast<unsigned>(config.jobs) : std::thread::hardware_concurrency();
  parallel_for(keys.size(), run_one, workers);

  bool any_failed = false;
  std::vector<RunResult> completed;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (status[i] != 0) {
      any_failed = true;
      fprintf(stderr, "job %s failed: %s\n", keys[i].to_string().c_str(), errors[i].c_str());
    } else {
      completed.push_back(results[i]);
    }
  }

  write_runs_csv(out_dir / "runs.csv", completed);
  write_summary_csv(out_dir / "summary.csv", config, completed);
  write_curves_csv(out_dir / "curves.csv", config, completed);
  return any_failed ? 1 : 0;
}

// ---------------------------------------------------------------------------
// gradcheck

namespace {

// Loss of a parameter vector for an arbitrary forward function, used to drive
// numkit::finite_diff_check over whole architectures.
template <typename Net, typename LossFn>
GradcheckRow check_architecture(const std::string& name, int instances, std::uint64_t seed,
                                const std::function<Net(Rng&)>& make,
                                const LossFn& loss_and_grad) {
  GradcheckRow row;
  row.architecture = name;
  row.instances = instances;
  for (int i = 0; i < instances; ++i) {
    Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(i)));
    Net net = make(rng);
    const auto [loss_fn, analytic] = loss_and_grad(net, rng);
    const double err =
        numkit::finite_diff_check(loss_fn, numkit::flatten(net), analytic, 1e-5);
    row.max_rel_error = std::max(row.max_rel_error, err);
  }
  return row;
}

}  // namespace

bool GradcheckReport::passed(double threshold) const {
  if (!corrupted_detected) return false;
  for (const auto& row : rows)
    if (!(row.max_rel_error < threshold)) return false;
  return true;
}

GradcheckReport run_gradcheck(int instances_per_arch, std::uint64_t seed) {
  GradcheckReport report;
  simworld::WorldConfig world;
  const int enc = world.enc_dim();
  const int obs_dim = world.obs_onehot_dim();
  const int steps = simworld::kHorizonSteps;

  const auto random_input = [](Rng& rng, int dim) {
    Vec x(static_cast<std::size_t>(dim));
    for (double& v : x) v = rng.uniform(-1.0, 1.0);
    return x;
  };

  // DNN (two-layer MLP, tanh hidden to keep finite differences smooth)
  report.rows.push_back(check_architecture<numkit::Mlp>(
      "dnn", instances_per_arch, Rng::derive(seed, 1),
      [&](Rng& rng) {
        numkit::Mlp net;
        net.layers.push_back(numkit::make_dense(obs_dim, 16, numkit::Activation::Tanh, rng));
        net.layers.push_back(numkit::make_dense(16, 12, numkit::Activation::Identity, rng));
        return net;
      },
      [&](const numkit::Mlp& net, Rng& rng) {
        const Vec x = random_input(rng, obs_dim);
        Vec target(12);
        for (double& v : target) v = rng.uniform(-1.0, 1.0);
        numkit::Mlp probe = net;
        const auto loss_fn = [probe, x, target](const Vec& flat) mutable {
          numkit::unflatten(probe, flat);
          const Vec out = numkit::mlp_forward(probe, x);
          double loss = 0.0;
          for (std::size_t k = 0; k < out.size(); ++k)
            loss += (out[k] - target[k]) * (out[k] - target[k]);
          return loss;
        };
        numkit::Mlp grads = numkit::zeros_like(net);
        numkit::MlpCache cache;
        const Vec out = numkit::mlp_forward(net, x, &cache);
        Vec dout(out.size());
        for (std::size_t k = 0; k < out.size(); ++k) dout[k] = 2.0 * (out[k] - target[k]);
        numkit::mlp_backward(net, cache, dout, grads);
        return std::make_pair(std::function<double(const Vec&)>(loss_fn),
                              numkit::flatten(grads));
      }));

  // 22-step RNN unroll with a linear head, loss summed over all steps
  struct RnnWithHead {
    numkit::RnnCell cell;
    numkit::DenseLayer head;
  };
  // (flat view = cell blocks then head blocks)
  const auto rnn_flat = [](const RnnWithHead& n) {
    Vec flat = numkit::flatten(n.cell);
    const Vec h = numkit::flatten(n.head);
    flat.insert(flat.end(), h.begin(), h.end());
    return flat;
  };
  // Per-step losses are averaged over the unroll: the finite-difference
  // comparison floors the denominator at 1e-8, so the loss magnitude has to
  // stay small enough that FD roundoff noise on near-zero gradients clears
  // the 1e-4 threshold.
  {
    GradcheckRow row;
    row.architecture = "rnn_22step";
    row.instances = instances_per_arch;
    for (int i = 0; i < instances_per_arch; ++i) {
      Rng rng(Rng::derive(seed, 100 + static_cast<std::uint64_t>(i)));
      RnnWithHead net{numkit::make_rnn(enc, 8, rng),
                      numkit::make_dense(8, 12, numkit::Activation::Identity, rng)};
      std::vector<Vec> inputs(static_cast<std::size_t>(steps));
      for (auto& x : inputs) x = random_input(rng, enc);
      std::vector<int> actions(static_cast<std::size_t>(steps));
      std::vector<double> targets(static_cast<std::size_t>(steps));
      for (auto& a : actions) a = rng.uniform_int(12);
      for (auto& t : targets) t = rng.uniform(-0.5, 0.5);

      const auto loss_of = [&](const RnnWithHead& n) {
        Vec h(8, 0.0);
        double loss = 0.0;
        for (int t = 0; t < steps; ++t) {
          h = numkit::rnn_step(n.cell, inputs[static_cast<std::size_t>(t)], h);
          const Vec out = numkit::dense_forward(n.head, h);
          const double err = out[static_cast<std::size_t>(actions[static_cast<std::size_t>(t)])] -
                             targets[static_cast<std::size_t>(t)];
          loss += err * err;
        }
        return loss / steps;
      };
      const auto loss_fn = [&, net](const Vec& flat) mutable {
        const std::size_t cell_n = numkit::param_count(net.cell);
        numkit::unflatten(net.cell, std::span(flat).first(cell_n));
        numkit::unflatten(net.head, std::span(flat).subspan(cell_n));
        return loss_of(net);
      };

      // analytic gradient
      RnnWithHead grads{numkit::zeros_like(net.cell), numkit::zeros_like(net.head)};
      std::vector<numkit::RnnStepCache> caches(static_cast<std::size_t>(steps));
      std::vector<numkit::DenseCache> head_caches(static_cast<std::size_t>(steps));
      Vec h(8, 0.0);
      std::vector<Vec> dh(static_cast<std::size_t>(steps));
      for (int t = 0; t < steps; ++t) {
        h = numkit::rnn_step(net.cell, inputs[static_cast<std::size_t>(t)], h,
                             &caches[static_cast<std::size_t>(t)]);
        const Vec out =
            numkit::dense_forward(net.head, h, &head_caches[static_cast<std::size_t>(t)]);
        const double err = out[static_cast<std::size_t>(actions[static_cast<std::size_t>(t)])] -
                           targets[static_cast<std::size_t>(t)];
        Vec dout(12, 0.0);
        dout[static_cast<std::size_t>(actions[static_cast<std::size_t>(t)])] = 2.0 * err / steps;
        dh[static_cast<std::size_t>(t)] = numkit::dense_backward(
            net.head, head_caches[static_cast<std::size_t>(t)], dout, grads.head);
      }
      Vec carry(8, 0.0);
      for (int t = steps - 1; t >= 0; --t) {
        Vec total = dh[static_cast<std::size_t>(t)];
        for (std::size_t k = 0; k < total.size(); ++k) total[k] += carry[k];
        Vec dh_prev;
        numkit::rnn_step_backward(net.cell, caches[static_cast<std::size_t>(t)], total,
                                  grads.cell, nullptr, dh_prev);
        carry = std::move(dh_prev);
      }
      const double err =
          numkit::finite_diff_check(loss_fn, rnn_flat(net), rnn_flat(grads), 1e-5);
      row.max_rel_error = std::max(row.max_rel_error, err);
    }
    report.rows.push_back(row);
  }

  // The remaining architectures are exercised through the agents layer, which
  // is how the trainers actually drive them.
  const auto agent_row = [&](const std::string& name, AgentKind kind, int instances,
                             std::uint64_t arch_seed) {
    GradcheckRow row;
    row.architecture = name;
    row.instances = instances;
    simworld::WorldConfig small = world;
    for (int i = 0; i < instances; ++i) {
      const std::uint64_t inst_seed = Rng::derive(arch_seed, static_cast<std::uint64_t>(i));
      Rng rng(inst_seed);
      AgentSpec spec;
      spec.kind = kind;
      spec.world = small;
      spec.hidden = 6;
      spec.mlp_hidden = 8;
      Agent agent = agents::make_agent(spec, inst_seed);
      // random sequence of encodings plus per-step targets
      std::vector<Vec> inputs(static_cast<std::size_t>(steps));
      for (auto& x : inputs) x = random_input(rng, enc);
      std::vector<int> actions(static_cast<std::size_t>(steps));
      std::vector<double> targets(static_cast<std::size_t>(steps));
      for (auto& a : actions) a = rng.uniform_int(12);
      for (auto& t : targets) t = rng.uniform(-0.5, 0.5);

      const auto loss_of = [&](const Agent& a) {
        const auto h = agents::core_unroll(a, inputs);
        double loss = 0.0;
        for (int t = 0; t < steps; ++t) {
          const Vec out = numkit::dense_forward(a.out_head, h[static_cast<std::size_t>(t)]);
          const double err =
              out[static_cast<std::size_t>(actions[static_cast<std::size_t>(t)])] -
              targets[static_cast<std::size_t>(t)];
          loss += err * err;
        }
        return loss / steps;
      };
      const auto loss_fn = [&, agent](const Vec& flat) mutable {
        agents::unflatten_params(agent, flat);
        return loss_of(agent);
      };

      agents::AgentGrads grads = agents::make_grads(agent);
      agents::CoreTape tape;
      const auto h = agents::core_unroll(agent, inputs, &tape);
      std::vector<Vec> dh(static_cast<std::size_t>(steps));
      for (int t = 0; t < steps; ++t) {
        numkit::DenseCache cache;
        const Vec out =
            numkit::dense_forward(agent.out_head, h[static_cast<std::size_t>(t)], &cache);
        const double err = out[static_cast<std::size_t>(actions[static_cast<std::size_t>(t)])] -
                           targets[static_cast<std::size_t>(t)];
        Vec dout(12, 0.0);
        dout[static_cast<std::size_t>(actions[static_cast<std::size_t>(t)])] = 2.0 * err / steps;
        dh[static_cast<std::size_t>(t)] =
            numkit::dense_backward(agent.out_head, cache, dout, grads.out_head);
      }
      agents::core_backward(agent, tape, dh, grads);

      // grads flattened in the same order as agent params
      Agent grad_holder = agent;
      grad_holder.mlp = grads.mlp;
      grad_holder.rnn = grads.rnn;
      grad_holder.lstm = grads.lstm;
      grad_holder.out_head = grads.out_head;
      grad_holder.obs_head = grads.obs_head;
      const double err = numkit::finite_diff_check(loss_fn, agents::flatten_params(agent),
                                                   agents::flatten_params(grad_holder), 1e-5);
      row.max_rel_error = std::max(row.max_rel_error, err);
    }
    report.rows.push_back(row);
  };

  agent_row("lstm_22step", AgentKind::RlLstm, instances_per_arch, Rng::derive(seed, 200));

  // Hybrid heads: SL heads and Q head gradients at fixed hidden inputs.
  {
    GradcheckRow row;
    row.architecture = "hybrid_heads";
    row.instances = instances_per_arch;
    for (int i = 0; i < instances_per_arch; ++i) {
      const std::uint64_t inst_seed = Rng::derive(seed, 300 + static_cast<std::uint64_t>(i));
      Rng rng(inst_seed);
      AgentSpec spec;
      spec.kind = AgentKind::HybridRnn;
      spec.world = world;
      spec.hidden = 6;
      spec.mlp_hidden = 8;
      Agent agent = agents::make_agent(spec, inst_seed);
      const Vec h = random_input(rng, spec.hidden);
      Vec q_target(12);
      for (double& v : q_target) v = rng.uniform(-1.0, 1.0);
      const int obs_target = rng.uniform_int(world.cardinalities[0]);
      const int action = rng.uniform_int(12);
      const double reward_target = rng.uniform(-1.0, 1.0);

      const auto loss_of = [&](const Agent& a) {
        // Q head squared error + reward head squared error on one action +
        // cross-entropy of the first observation block
        const Vec q = numkit::mlp_forward(a.mlp, h);
        double loss = 0.0;
        for (std::size_t k = 0; k < q.size(); ++k)
          loss += (q[k] - q_target[k]) * (q[k] - q_target[k]);
        const Vec pred = numkit::dense_forward(a.out_head, h);
        const double err = pred[static_cast<std::size_t>(action)] - reward_target;
        loss += err * err;
        const Vec logits = numkit::dense_forward(a.obs_head, h);
        const int card = world.cardinalities[0];
        double m = logits[0];
        for (int k = 1; k < card; ++k) m = std::max(m, logits[static_cast<std::size_t>(k)]);
        double z = 0.0;
        for (int k = 0; k < card; ++k) z += std::exp(logits[static_cast<std::size_t>(k)] - m);
        loss += -(logits[static_cast<std::size_t>(obs_target)] - m - std::log(z));
        return loss;
      };
      const auto loss_fn = [&, agent](const Vec& flat) mutable {
        agents::unflatten_params(agent, flat);
        return loss_of(agent);
      };

      agents::AgentGrads grads = agents::make_grads(agent);
      {
        numkit::MlpCache cache;
        const Vec q = numkit::mlp_forward(agent.mlp, h, &cache);
        Vec dout(q.size());
        for (std::size_t k = 0; k < q.size(); ++k) dout[k] = 2.0 * (q[k] - q_target[k]);
        numkit::mlp_backward(agent.mlp, cache, dout, grads.mlp);
      }
      {
        numkit::DenseCache cache;
        const Vec pred = numkit::dense_forward(agent.out_head, h, &cache);
        Vec dout(12, 0.0);
        dout[static_cast<std::size_t>(action)] =
            2.0 * (pred[static_cast<std::size_t>(action)] - reward_target);
        numkit::dense_backward(agent.out_head, cache, dout, grads.out_head);
      }
      {
        numkit::DenseCache cache;
        const Vec logits = numkit::dense_forward(agent.obs_head, h, &cache);
        const int card = world.cardinalities[0];
        double m = logits[0];
        for (int k = 1; k < card; ++k) m = std::max(m, logits[static_cast<std::size_t>(k)]);
        double z = 0.0;
        for (int k = 0; k < card; ++k) z += std::exp(logits[static_cast<std::size_t>(k)] - m);
        Vec dout(logits.size(), 0.0);
        for (int k = 0; k < card; ++k) {
          const double p = std::exp(logits[static_cast<std::size_t>(k)] - m) / z;
          dout[static_cast<std::size_t>(k)] = p - (k == obs_target ? 1.0 : 0.0);
        }
        numkit::dense_backward(agent.obs_head, cache, dout, grads.obs_head);
      }
      Agent grad_holder = agent;
      grad_holder.mlp = grads.mlp;
      grad_holder.rnn = grads.rnn;
      grad_holder.lstm = grads.lstm;
      grad_holder.out_head = grads.out_head;
      grad_holder.obs_head = grads.obs_head;
      const double err = numkit::finite_diff_check(loss_fn, agents::flatten_params(agent),
                                                   agents::flatten_params(grad_holder), 1e-5);
      row.max_rel_error = std::max(row.max_rel_error, err);
    }
    report.rows.push_back(row);
  }

  // Negative control: a deliberately corrupted backward pass (one sign flip)
  // must produce a large relative error.
  {
    Rng rng(Rng::derive(seed, 400));
    numkit::Mlp net;
    net.layers.push_back(numkit::make_dense(obs_dim, 16, numkit::Activation::Tanh, rng));
    net.layers.push_back(numkit::make_dense(16, 12, numkit::Activation::Identity, rng));
    const Vec x = random_input(rng, obs_dim);
    Vec target(12);
    for (double& v : target) v = rng.uniform(-1.0, 1.0);
    const auto loss_fn = [net, x, target](const Vec& flat) mutable {
      numkit::unflatten(net, flat);
      const Vec out = numkit::mlp_forward(net, x);
      double loss = 0.0;
      for (std::size_t k = 0; k < out.size(); ++k)
        loss += (out[k] - target[k]) * (out[k] - target[k]);
      return loss;
    };
    numkit::Mlp grads = numkit::zeros_like(net);
    numkit::MlpCache cache;
    const Vec out = numkit::mlp_forward(net, x, &cache);
    Vec dout(out.size());
    for (std::size_t k = 0; k < out.size(); ++k) dout[k] = 2.0 * (out[k] - target[k]);
    numkit::mlp_backward(net, cache, dout, grads);
    Vec flat_grads = numkit::flatten(grads);
    flat_grads[0] = -flat_grads[0] - 1.0;  // injected bug
    report.corrupted_error =
        numkit::finite_diff_check(loss_fn, numkit::flatten(net), flat_grads, 1e-5);
    report.corrupted_detected = report.corrupted_error > 0.1;
  }

  return report;
}

// ---------------------------------------------------------------------------
// simcheck

bool SimcheckReport::passed(double fit_tol, double step_tol) const {
  return fit_rows_checked > 0 && step_rows_checked > 0 && fit_max_row_tv < fit_tol &&
         step_max_row_tv < step_tol;
}

SimcheckReport run_simcheck(std::uint64_t seed) {
  SimcheckReport report;

  // Small world so that 100K transitions visit every context often enough for
  // the per-row comparison to be meaningful.
  simworld::WorldConfig config;
  config.cardinalities = {4, 4, 4, 4, 4};
  const SimulatorSpec world = simworld::random_world(config, Rng::derive(seed, 1));

  // Part 1: recover the generating tables from 100K uniform-policy
  // transitions; compare rows observed at least min_count times.
  {
    const Dataset data = simworld::generate_dataset(
        world, BehaviorPolicy::uniform(), 100000, Rng::derive(seed, 2));
    const auto fitted = simworld::fit_observation_tables(data, config, 0.0);

    // visit counts per context
    std::array<std::vector<std::int64_t>, simworld::kNumDims> counts;
    for (int d = 0; d < simworld::kNumDims; ++d)
      counts[static_cast<std::size_t>(d)].assign(
          static_cast<std::size_t>(config.cardinalities[d]) * simworld::kNumActions * 2, 0);
    for (const auto& traj : data.trajectories)
      for (int t = 0; t < simworld::kHorizonSteps; ++t) {
        const int a = traj.actions[static_cast<std::size_t>(t)];
        const int donated = traj.rewards[static_cast<std::size_t>(t)] > 0.0 ? 1 : 0;
        for (int d = 0; d < simworld::kNumDims; ++d) {
          const int v = traj.observations[static_cast<std::size_t>(t)][d];
          counts[static_cast<std::size_t>(d)]
                [static_cast<std::size_t>((v * simworld::kNumActions + a) * 2 + donated)] += 1;
        }
      }

    const std::int64_t min_count = 400;
    for (int d = 0; d < simworld::kNumDims; ++d)
      for (int v = 0; v < config.cardinalities[d]; ++v)
        for (int a = 0; a < simworld::kNumActions; ++a)
          for (int donated = 0; donated < 2; ++donated) {
            const auto c =
                counts[static_cast<std::size_t>(d)]
                      [static_cast<std::size_t>((v * simworld::kNumActions + a) * 2 + donated)];
            if (c < min_count) continue;
            const auto truth = world.tables.row(d, v, a, donated);
            const auto fit = fitted.row(d, v, a, donated);
            double tv = 0.0;
            for (std::size_t k = 0; k < truth.size(); ++k)
              tv += std::abs(truth[k] - fit[k]);
            tv *= 0.5;
            report.fit_max_row_tv = std::max(report.fit_max_row_tv, tv);
            ++report.fit_rows_checked;
          }
  }

  // Part 2: per-row sampling frequencies of sim_step against the stored rows,
  // 50K single-step samples per probed context.
  {
    Rng pick(Rng::derive(seed, 3));
    const int n_contexts = 3;
    const int n_samples = 50000;
    for (int probe = 0; probe < n_contexts; ++probe) {
      simworld::Observation obs{};
      for (int d = 0; d < simworld::kNumDims; ++d)
        obs[d] = pick.uniform_int(config.cardinalities[d]);
      const int action = pick.uniform_int(simworld::kNumActions);

      std::array<std::vector<std::int64_t>, simworld::kNumDims> counts;
      for (int d = 0; d < simworld::kNumDims; ++d)
        counts[static_cast<std::size_t>(d)].assign(
            static_cast<std::size_t>(config.cardinalities[d]), 0);

      Rng rng(Rng::derive(seed, 4 + static_cast<std::uint64_t>(probe)));
      int donated = 0;
      for (int s = 0; s < n_samples; ++s) {
        simworld::SimState state;
        state.obs = obs;
        state.step = 1;
        state.hidden.assign(static_cast<std::size_t>(world.reward.hidden_dim()), 0.0);
        state.prev_action = -1;
        state.prev_reward = 0.0;
        const auto step = simworld::sim_step(world, state, action, rng);
        donated = step.reward > 0.0 ? 1 : 0;  // deterministic given (obs, action)
        for (int d = 0; d < simworld::kNumDims; ++d)
          counts[static_cast<std::size_t>(d)][static_cast<std::size_t>(step.obs[d])] += 1;
      }
      for (int d = 0; d < simworld::kNumDims; ++d) {
        const auto truth = world.tables.row(d, obs[d], action, donated);
        double tv = 0.0;
        for (std::size_t k = 0; k < truth.size(); ++k)
          tv += std::abs(truth[k] - static_cast<double>(counts[static_cast<std::size_t>(d)][k]) /
                                        n_samples);
        tv *= 0.5;
        report.step_max_row_tv = std::max(report.step_max_row_tv, tv);
        ++report.step_rows_checked;
      }
    }
  }

  return report;
}

}  // namespace rrl::xctl
