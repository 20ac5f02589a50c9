// Command-line front end: encoder pretraining, training, evaluation, dumps, reports.
#include "cura/experiment.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace fs = std::filesystem;
using namespace cura;

namespace {

// One line, `error: <kind>: <message>`, newlines flattened.
int fail(const std::string& kind, std::string message) {
  for (char& c : message) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  std::fprintf(stderr, "error: %s: %s\n", kind.c_str(), message.c_str());
  return kind == "usage" ? 2 : 1;
}

exp::RunConfig base_config(const std::string& config_path, const std::vector<std::string>& overrides) {
  exp::RunConfig cfg;
  if (!config_path.empty()) cfg = exp::load_config(config_path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    exp::set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

std::vector<env::Scenario> parse_scenarios(const std::vector<std::string>& names) {
  std::vector<env::Scenario> out;
  for (const auto& n : names) out.push_back(env::scenario_from_string(n));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Uncertainty-aware pushing: training and evaluation driver"};
  app.require_subcommand(1);

  std::string config_path, out, variant, run_dir, checkpoint, encoder_dir;
  std::vector<std::string> overrides, scenarios{"uniform", "adversarial"}, inputs;
  std::vector<double> sizes{0.5, 0.75, 1.0};
  std::uint64_t encoder_seed = 7, train_seed = 1, eval_seed = 1000, dump_seed = 1;
  int episodes = 300, jobs = 1, iterations = -1, obstacles = -1;
  bool resume = false, quiet = false;

  auto* pre = app.add_subcommand("pretrain-encoder", "Pretrain the confidence-map VAE encoder");
  pre->add_option("--config", config_path, "Config file (key = value lines)");
  pre->add_option("--set", overrides, "Override one config key (key=value), repeatable");
  pre->add_option("--seed", encoder_seed, "Encoder seed")->default_val(7);
  pre->add_option("--out", out, "Output encoder directory")->required();

  auto* train = app.add_subcommand("train", "Train one variant");
  train->add_option("--variant", variant, "Variant name")->required();
  train->add_option("--config", config_path, "Config file (key = value lines)");
  train->add_option("--set", overrides, "Override one config key (key=value), repeatable");
  train->add_option("--seed", train_seed, "Training seed")->default_val(1);
  train->add_option("--iterations", iterations, "Training iterations (default from config)");
  train->add_option("--encoder", encoder_dir, "Pretrained encoder directory to reuse");
  train->add_option("--out", out, "Run directory")->required();
  train->add_flag("--resume", resume, "Continue from <out>/latest");
  train->add_flag("--quiet", quiet, "Do not print per-iteration rows");

  auto* eval = app.add_subcommand("eval", "Evaluate a trained run on paired episodes");
  eval->add_option("--run", run_dir, "Run directory")->required();
  eval->add_option("--checkpoint", checkpoint, "Checkpoint directory (default <run>/latest)");
  eval->add_option("--scenario", scenarios, "Scenarios (uniform, adversarial)");
  eval->add_option("--object-size", sizes, "Object sizes");
  eval->add_option("--episodes", episodes, "Episodes per cell")->default_val(300);
  eval->add_option("--seed", eval_seed, "Evaluation seed shared across variants")->default_val(1000);
  eval->add_option("--obstacles", obstacles, "Override the obstacle count upper bound");
  eval->add_option("--jobs", jobs, "Concurrent episodes")->default_val(1);
  eval->add_option("--out", out, "Output directory for eval.csv and episodes.csv")->required();

  double dump_size = 1.0;
  std::string dump_scenario = "adversarial";
  auto* dump = app.add_subcommand("dump", "Dump one deterministic episode");
  dump->add_option("--run", run_dir, "Run directory")->required();
  dump->add_option("--checkpoint", checkpoint, "Checkpoint directory (default <run>/latest)");
  dump->add_option("--scenario", dump_scenario, "Scenario")->default_val("adversarial");
  dump->add_option("--object-size", dump_size, "Object size")->default_val(1.0);
  dump->add_option("--seed", dump_seed, "Episode seed")->default_val(1);
  dump->add_option("--out", out, "Output directory")->required();

  auto* replay = app.add_subcommand("replay", "Re-simulate a dump and report the largest state error");
  replay->add_option("--dump", run_dir, "Dump directory")->required();

  auto* report = app.add_subcommand("report", "Aggregate eval.csv files into a success-rate table");
  report->add_option("inputs", inputs, "eval.csv files")->required();
  report->add_option("--out", out, "Write the table here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what());
  }

  try {
    if (*pre) {
      auto cfg = base_config(config_path, overrides);
      if (pre->count("--seed") > 0) cfg.encoder_seed = encoder_seed;
      perception::VaeTrainStats stats;
      exp::pretrain_encoder_to(cfg, out, &stats);
      std::printf("encoder %s reconstruction %.6g kl %.6g\n", out.c_str(), stats.final_reconstruction, stats.final_kl);
    } else if (*train) {
      auto cfg = base_config(config_path, overrides);
      cfg.variant = variant;
      if (train->count("--seed") > 0) cfg.seed = train_seed;
      if (iterations > 0) cfg.iterations = iterations;
      if (!encoder_dir.empty()) cfg.encoder_dir = encoder_dir;
      exp::run_training(cfg, out, resume, [&](const train::IterationLog& row) {
        if (!quiet) std::printf("%s\n", train::format_log_row(row).c_str()), std::fflush(stdout);
      });
    } else if (*eval) {
      const auto run = exp::load_run(run_dir, checkpoint.empty() ? std::nullopt : std::optional<fs::path>(checkpoint));
      exp::EvalOptions opts;
      opts.scenarios = parse_scenarios(scenarios);
      opts.object_sizes = sizes;
      opts.episodes = episodes;
      opts.seed = eval_seed;
      opts.jobs = jobs;
      if (obstacles >= 0) opts.obstacle_count = obstacles;
      const auto rep = exp::run_eval(run, opts);
      fs::create_directories(out);
      exp::write_report_csv(rep, fs::path(out) / "eval.csv");
      exp::write_episodes_csv(rep, fs::path(out) / "episodes.csv");
      std::cout << exp::format_success_table({rep});
    } else if (*dump) {
      const auto run = exp::load_run(run_dir, checkpoint.empty() ? std::nullopt : std::optional<fs::path>(checkpoint));
      auto ep = run.config.episode;
      ep.scenario = env::scenario_from_string(dump_scenario);
      ep.object_size = dump_size;
      const auto r = exp::dump_trajectory(run, ep, dump_seed, out);
      std::printf("steps %d outcome %s\n", r.steps, exp::to_string(r.outcome).c_str());
    } else if (*replay) {
      const auto r = exp::replay_trajectory(run_dir);
      std::printf("steps %d max_error %.3g\n", r.steps, r.max_error);
    } else if (*report) {
      std::vector<exp::EvalReport> all;
      for (const auto& in : inputs) {
        auto reps = exp::read_report_csv(in);
        all.insert(all.end(), reps.begin(), reps.end());
      }
      const auto table = exp::format_success_table(all);
      if (out.empty()) {
        std::cout << table;
      } else {
        std::ofstream(out) << table;
      }
    }
  } catch (const std::invalid_argument& e) {
    return fail("invalid_argument", e.what());
  } catch (const nn::DivergenceError& e) {
    return fail("divergence", e.what());
  } catch (const std::exception& e) {
    return fail("runtime", e.what());
  }
  return 0;
}
