// xctl: experiment control for the recurrent RL laboratory.
//
//   xctl run --config <file>          run an experiment from a config document
//   xctl preset <E1|E2|E3> [--out d]  materialize a preset config and run it
//   xctl gradcheck                    finite-difference check of every architecture
//   xctl simcheck                     observation-table consistency checks
//   xctl eval --checkpoint <f> --world <f>   evaluate a saved agent in a saved world

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "rrl/agents.hpp"
#include "rrl/evalkit.hpp"
#include "rrl/simworld.hpp"
#include "rrl/xctl.hpp"

namespace {

int cmd_run(const std::string& config_path) {
  std::ifstream in(config_path);
  if (!in) {
    std::fprintf(stderr, "cannot open config file %s\n", config_path.c_str());
    return 2;
  }
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string raw = buf.str();
  rrl::xctl::ExperimentConfig config;
  try {
    config = rrl::xctl::config_from_json(raw);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  }
  return rrl::xctl::run_experiment(config, raw);
}

int cmd_preset(const std::string& name, const std::string& out_dir, bool emit_only) {
  rrl::xctl::ExperimentConfig config;
  try {
    config = rrl::xctl::preset(name);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 2;
  }
  if (!out_dir.empty()) config.out_dir = out_dir;
  std::filesystem::create_directories(config.out_dir);
  const std::string config_path = config.out_dir + "/config.json";
  rrl::xctl::save_config(config, config_path);
  std::printf("wrote %s\n", config_path.c_str());
  if (emit_only) return 0;
  return cmd_run(config_path);
}

int cmd_gradcheck() {
  const auto report = rrl::xctl::run_gradcheck();
  for (const auto& row : report.rows)
    std::printf("%-14s %2d instances   max rel err %.3e   %s\n", row.architecture.c_str(),
                row.instances, row.max_rel_error, row.max_rel_error < 1e-4 ? "ok" : "FAIL");
  std::printf("%-14s corrupted backward rel err %.3e   %s\n", "negative",
              report.corrupted_error, report.corrupted_detected ? "detected" : "MISSED");
  return report.passed() ? 0 : 1;
}

int cmd_simcheck() {
  const auto report = rrl::xctl::run_simcheck();
  std::printf("table recovery : max row TV %.4f over %d rows (tolerance 0.05)\n",
              report.fit_max_row_tv, report.fit_rows_checked);
  std::printf("step sampling  : max row TV %.4f over %d rows (tolerance 0.02)\n",
              report.step_max_row_tv, report.step_rows_checked);
  std::printf("%s\n", report.passed() ? "ok" : "FAIL");
  return report.passed() ? 0 : 1;
}

int cmd_eval(const std::string& checkpoint, const std::string& world_file, int episodes,
             std::uint64_t seed) {
  try {
    const auto world = rrl::simworld::load_simspec(world_file);
    const auto agent = rrl::agents::load_checkpoint(checkpoint);
    const auto result = rrl::evalkit::evaluate_policy(world, agent, episodes, seed);
    std::printf("model           : %s\n", rrl::agents::kind_name(agent.spec.kind).c_str());
    std::printf("episodes        : %d\n", result.n_episodes);
    std::printf("avg step reward : %.4f\n", result.mean_per_step_reward);
    std::printf("discounted ret  : %.4f\n", result.mean_discounted_return);
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "eval failed: %s\n", e.what());
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Experiment control for recurrent and hybrid Q-learning studies"};
  app.require_subcommand(1);

  std::string config_path;
  auto* run = app.add_subcommand("run", "Run an experiment from a config file");
  run->add_option("--config", config_path, "Experiment config JSON")->required();

  std::string preset_name, preset_out;
  bool emit_only = false;
  auto* preset = app.add_subcommand("preset", "Materialize and run a preset (E1, E2, E3)");
  preset->add_option("name", preset_name, "Preset name")->required();
  preset->add_option("--out", preset_out, "Output directory");
  preset->add_flag("--emit-only", emit_only, "Write the config without running it");

  auto* gradcheck = app.add_subcommand("gradcheck", "Gradient verification suite");
  auto* simcheck = app.add_subcommand("simcheck", "Simulator consistency suite");

  std::string checkpoint_path, world_path;
  int eval_episodes = 2000;
  std::uint64_t eval_seed = 1;
  auto* eval = app.add_subcommand("eval", "Evaluate a saved agent in a saved world");
  eval->add_option("--checkpoint", checkpoint_path, "Agent checkpoint JSON")->required();
  eval->add_option("--world", world_path, "Simulator spec JSON")->required();
  eval->add_option("--episodes", eval_episodes, "Rollout episodes");
  eval->add_option("--seed", eval_seed, "Evaluation seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path);
    if (preset->parsed()) return cmd_preset(preset_name, preset_out, emit_only);
    if (gradcheck->parsed()) return cmd_gradcheck();
    if (simcheck->parsed()) return cmd_simcheck();
    if (eval->parsed()) return cmd_eval(checkpoint_path, world_path, eval_episodes, eval_seed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
