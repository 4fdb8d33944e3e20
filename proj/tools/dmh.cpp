#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dmh/checkpoint.hpp"
#include "dmh/harness.hpp"

namespace fs = std::filesystem;
using namespace dmh;

namespace {

std::string run_id_from(const std::string& out_dir) {
  auto name = fs::path(out_dir).filename().string();
  return name.empty() ? out_dir : name;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  DMH_CHECK_T(ParseError, out.good(), "cannot open ", path.string(), " for writing");
  out << text;
}

RunConfig load_run_config(const std::string& config_path,
                          const std::vector<std::string>& overrides) {
  if (config_path.empty()) return parse_config_text("", overrides);
  return load_config(config_path, overrides);
}

// --checkpoint accepts either the run directory or the checkpoint file.
std::pair<fs::path, fs::path> resolve_checkpoint(const std::string& arg) {
  fs::path p(arg);
  if (fs::is_directory(p)) return {p / "checkpoint.bin", p / "config.toml"};
  return {p, p.parent_path() / "config.toml"};
}

Task reference_task(const RunConfig& cfg) {
  Rng rng(0);
  return sample_task(parse_env_family(cfg.data.env), rng,
                     static_cast<int32_t>(cfg.data.tmaze_horizon));
}

int cmd_gen_data(const RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  auto data = generate_dataset(cfg, static_cast<uint64_t>(cfg.train.seed));
  fs::path file = fs::path(out_dir) / "dataset.jsonl";
  write_dataset(data, file.string());
  nlohmann::json manifest;
  manifest["env"] = cfg.data.env;
  manifest["tasks"] = data.size();
  manifest["steps_per_task"] = cfg.data.steps_per_task;
  manifest["seed"] = cfg.train.seed;
  manifest["file"] = "dataset.jsonl";
  size_t episodes = 0;
  for (const auto& h : data) episodes += h.episodes.size();
  manifest["episodes"] = episodes;
  write_text(fs::path(out_dir) / "manifest.json", manifest.dump(2) + "\n");
  write_text(fs::path(out_dir) / "config.toml", render_config(cfg));
  std::cout << "wrote " << data.size() << " task histories (" << episodes
            << " episodes) to " << file.string() << "\n";
  return 0;
}

std::string dataset_file(const std::string& data_arg) {
  fs::path p(data_arg);
  if (fs::is_directory(p)) return (p / "dataset.jsonl").string();
  return data_arg;
}

int cmd_train(RunConfig cfg, const std::string& data_arg, const std::string& init_arg,
              const std::string& out_dir) {
  auto data = read_dataset(dataset_file(data_arg));
  DMH_CHECK_T(ConfigError, !data.empty(), "dataset is empty");
  // the dataset fixes the environment; keep the echoed config consistent
  cfg.data.env = env_family_name(data[0].task.family);
  if (data[0].task.family == EnvFamily::kTmaze)
    cfg.data.tmaze_horizon = data[0].task.horizon;
  cfg.data.tasks = static_cast<int64_t>(data.size());
  fs::create_directories(out_dir);
  write_text(fs::path(out_dir) / "config.toml", render_config(cfg));
  Model model(cfg, data[0].task, static_cast<uint64_t>(cfg.train.seed));
  if (!init_arg.empty())
    load_checkpoint(model.params(), resolve_checkpoint(init_arg).first.string());
  std::ofstream loss_log(fs::path(out_dir) / "loss.log");
  auto result = train_model(model, data, cfg, &loss_log);
  save_checkpoint(model.params(), (fs::path(out_dir) / "checkpoint.bin").string());
  std::cout << "trained " << cfg.model.kind << " for " << cfg.train.iterations
            << " iterations; final loss " << result.loss_log.back().second
            << "; checkpoint " << (fs::path(out_dir) / "checkpoint.bin").string() << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_arg, const std::string& tasks_arg, int64_t episodes,
             const std::vector<std::string>& overrides, const std::string& out_dir) {
  auto [ckpt_file, cfg_file] = resolve_checkpoint(ckpt_arg);
  DMH_CHECK_T(ConfigError, fs::exists(cfg_file),
              "no config.toml next to checkpoint: ", cfg_file.string());
  RunConfig cfg = load_config(cfg_file.string(), overrides);
  if (episodes > 0) cfg.eval.episodes = episodes;
  int64_t n_tasks = cfg.eval.tasks;
  if (!tasks_arg.empty() && tasks_arg != "heldout") n_tasks = std::stoll(tasks_arg);
  Task ref = reference_task(cfg);
  Model model(cfg, ref, static_cast<uint64_t>(cfg.train.seed));
  load_checkpoint(model.params(), ckpt_file.string());
  auto tasks = sample_eval_tasks(cfg, n_tasks, static_cast<uint64_t>(cfg.eval.seed));
  auto report = online_test(model, tasks, cfg.eval.episodes);
  fs::create_directories(out_dir);
  write_text(fs::path(out_dir) / "config.toml", render_config(cfg));
  std::string run_id = run_id_from(out_dir);
  write_metrics_jsonl((fs::path(out_dir) / "metrics.jsonl").string(), run_id, report);
  write_summary_csv((fs::path(out_dir) / "summary.csv").string(), run_id, {report});
  std::cout << "evaluated " << report.model << " on " << tasks.size() << " tasks x "
            << cfg.eval.episodes << " episodes; mean return " << report.mean_return()
            << "\n";
  return 0;
}

int cmd_bench(const RunConfig& cfg, const std::vector<int64_t>& horizons,
              const std::vector<std::string>& models, int64_t episodes,
              const std::string& out_dir) {
  auto report = benchmark_timing(cfg, models, horizons, episodes,
                                 static_cast<uint64_t>(cfg.eval.seed));
  fs::create_directories(out_dir);
  nlohmann::json j;
  j["horizons"] = report.horizons;
  for (const auto& [kind, times] : report.ms_per_episode) {
    j["ms_per_episode"][kind] = times;
    j["slope"][kind] = report.slope.at(kind);
  }
  write_text(fs::path(out_dir) / "timing.json", j.dump(2) + "\n");
  for (const auto& [kind, slope] : report.slope)
    std::cout << kind << " log-log slope " << slope << "\n";
  return 0;
}

int cmd_ablate(RunConfig cfg, const std::string& data_arg, const std::string& out_dir) {
  auto data = read_dataset(dataset_file(data_arg));
  DMH_CHECK_T(ConfigError, !data.empty(), "dataset is empty");
  cfg.model.kind = "dmh";
  cfg.data.env = env_family_name(data[0].task.family);
  fs::create_directories(out_dir);
  write_text(fs::path(out_dir) / "config.toml", render_config(cfg));
  std::ofstream loss_log(fs::path(out_dir) / "loss.log");
  auto result = ablate_subgoals(cfg, data, &loss_log);
  std::string run_id = run_id_from(out_dir);
  EvalReport with = result.with_subgoals;
  with.model += "+subgoals";
  EvalReport without = result.without_subgoals;
  without.model += "-subgoals";
  write_metrics_jsonl((fs::path(out_dir) / "metrics_with.jsonl").string(), run_id, with);
  write_metrics_jsonl((fs::path(out_dir) / "metrics_without.jsonl").string(), run_id,
                      without);
  write_summary_csv((fs::path(out_dir) / "summary.csv").string(), run_id, {with, without});
  std::cout << "mean final return with sub-goals " << with.mean_return()
            << ", without " << without.mean_return() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid long-context/short-context decision model toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "runs/out", data_arg, ckpt_arg;
  std::vector<std::string> overrides;
  int64_t seed = -1;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "config file (TOML subset)");
    cmd->add_option("--set", overrides, "override, e.g. train.lr=2e-4");
    cmd->add_option("--seed", seed, "seed (shorthand for train.seed)");
    cmd->add_option("--out", out_dir, "output directory");
  };

  auto* gen = app.add_subcommand("gen-data", "generate offline learning histories");
  std::string env_name;
  int64_t n_tasks_opt = -1, steps_opt = -1;
  gen->add_option("--env", env_name, "environment family");
  gen->add_option("--tasks", n_tasks_opt, "number of tasks");
  gen->add_option("--steps", steps_opt, "environment steps per task");
  add_common(gen);

  auto* train = app.add_subcommand("train", "offline training");
  std::string model_kind;
  train->add_option("--model", model_kind, "dmh | ad_transformer | ad_mamba | dt");
  train->add_option("--data", data_arg, "dataset directory or file")->required();
  std::string init_arg;
  train->add_option("--init", init_arg,
                    "warm-start weights from a run directory or checkpoint file");
  add_common(train);

  auto* eval = app.add_subcommand("eval", "gradient-free online testing");
  std::string tasks_arg;
  int64_t episodes_opt = -1;
  eval->add_option("--checkpoint", ckpt_arg, "run directory or checkpoint file")->required();
  eval->add_option("--episodes", episodes_opt, "episodes per task");
  eval->add_option("--tasks", tasks_arg, "'heldout' or a task count");
  add_common(eval);

  auto* bench = app.add_subcommand("bench", "online wall-time scaling");
  std::vector<int64_t> horizons{200, 400, 800, 1600};
  std::vector<std::string> bench_models{"dmh", "ad_transformer"};
  int64_t bench_episodes = 4;
  bench->add_option("--horizons", horizons, "horizons to time");
  bench->add_option("--models", bench_models, "model kinds to time");
  bench->add_option("--episodes", bench_episodes, "episodes per point (first is warmup)");
  add_common(bench);

  auto* ablate = app.add_subcommand("ablate", "paired runs with/without mapped-goal loss");
  ablate->add_option("--data", data_arg, "dataset directory or file")->required();
  add_common(ablate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    RunConfig cfg = load_run_config(config_path, overrides);
    if (seed >= 0) cfg.train.seed = seed;
    if (gen->parsed()) {
      if (!env_name.empty()) cfg.data.env = env_name;
      if (n_tasks_opt > 0) cfg.data.tasks = n_tasks_opt;
      if (steps_opt > 0) cfg.data.steps_per_task = steps_opt;
      return cmd_gen_data(cfg, out_dir);
    }
    if (train->parsed()) {
      if (!model_kind.empty()) cfg.model.kind = model_kind;
      return cmd_train(cfg, data_arg, init_arg, out_dir);
    }
    if (eval->parsed()) return cmd_eval(ckpt_arg, tasks_arg, episodes_opt, overrides, out_dir);
    if (bench->parsed()) return cmd_bench(cfg, horizons, bench_models, bench_episodes, out_dir);
    if (ablate->parsed()) return cmd_ablate(cfg, data_arg, out_dir);
    std::cerr << "no subcommand\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
