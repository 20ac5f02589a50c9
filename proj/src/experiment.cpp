#include "cura/experiment.hpp"

#include "cura/stats.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#ifndef CURA_VERSION
#define CURA_VERSION "unknown"
#endif

namespace cura::exp {

namespace fs = std::filesystem;

const char* version_stamp() { return CURA_VERSION; }

void VariantSpec::apply(RunConfig& cfg) const {
  cfg.variant = name;
  cfg.sensor.occlusion = occlusion;
  cfg.sensor.use_latent = use_latent;
  cfg.hp.lambda_r = lambda_r;
  cfg.hp.lambda_u = lambda_u;
  cfg.base_only = base_only;
}

const std::vector<VariantSpec>& all_variants() {
  using perception::OcclusionMode;
  static const std::vector<VariantSpec> v = {
      {"push_no_occlusion", OcclusionMode::ObjectFiltered, true, 0.0, 0.0, false},
      {"push_with_occlusion", OcclusionMode::Realistic, false, 0.0, 0.0, false},
      {"cura_ppo", OcclusionMode::Realistic, true, 0.25, 1.0, false},
      {"baseline_conf", OcclusionMode::Realistic, true, 0.0, 0.0, false},
      {"cura_no_uncertainty", OcclusionMode::Realistic, true, 0.25, 0.0, false},
      {"cura_no_risk", OcclusionMode::Realistic, true, 0.0, 1.0, false},
      {"push_base", OcclusionMode::Realistic, false, 0.0, 0.0, true},
      {"cura_base", OcclusionMode::Realistic, true, 0.25, 1.0, true},
  };
  return v;
}

const VariantSpec& find_variant(const std::string& name) {
  for (const auto& v : all_variants()) {
    if (v.name == name) return v;
  }
  throw std::invalid_argument("unknown variant '" + name + "'");
}

env::EnvOptions env_options(const RunConfig& cfg) {
  env::EnvOptions o;
  o.episode = cfg.episode;
  o.reward = cfg.reward;
  o.sensor = cfg.sensor;
  o.base_only = cfg.base_only;
  return o;
}

train::TrainConfig train_config(const RunConfig& cfg, const fs::path& out_dir) {
  train::TrainConfig t;
  t.env = env_options(cfg);
  t.scenarios = cfg.scenarios;
  t.object_sizes = cfg.object_sizes;
  t.hp = cfg.hp;
  t.iterations = cfg.iterations;
  t.seed = cfg.seed;
  t.checkpoint_every = cfg.checkpoint_every;
  t.out_dir = out_dir;
  return t;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::string read_first_line(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  if (!in || !std::getline(in, line)) throw std::runtime_error("cannot read " + path.string());
  return line;
}

}  // namespace

std::shared_ptr<const perception::MapEncoder> pretrain_encoder_to(const RunConfig& cfg, const fs::path& dir,
                                                                  perception::VaeTrainStats* stats) {
  fs::create_directories(dir);
  if (cfg.encoder == "pool") {
    write_text(dir / "kind.txt", "pool\n");
    return std::make_shared<perception::PoolEncoder>();
  }
  // Encoder data always comes from realistic sensing so every variant shares one encoder.
  auto opts = env_options(cfg);
  opts.sensor.occlusion = perception::OcclusionMode::Realistic;
  opts.base_only = false;
  const auto windows =
      env::collect_random_windows(opts, cfg.encoder_episodes, cfg.encoder_stride, cfg.vae.pool_factor, cfg.encoder_seed);
  auto vae = perception::pretrain_encoder(windows, cfg.vae, cfg.encoder_seed, stats);
  vae.save(dir);
  write_text(dir / "kind.txt", "vae\n");
  return std::make_shared<perception::VaeEncoder>(std::move(vae));
}

std::shared_ptr<const perception::MapEncoder> load_encoder(const fs::path& dir) {
  const auto kind = read_first_line(dir / "kind.txt");
  if (kind == "pool") return std::make_shared<perception::PoolEncoder>();
  if (kind == "vae") return std::make_shared<perception::VaeEncoder>(perception::VaeEncoder::load(dir));
  throw std::runtime_error("unknown encoder kind '" + kind + "' in " + dir.string());
}

void run_training(RunConfig cfg, const fs::path& out_dir, bool resume,
                  const std::function<void(const train::IterationLog&)>& progress) {
  find_variant(cfg.variant).apply(cfg);
  cfg.hp.validate();
  cfg.episode.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create run directory " + out_dir.string() + ": " + ec.message());

  const fs::path encoder_dir = out_dir / "encoder";
  std::shared_ptr<const perception::MapEncoder> encoder;
  if (resume && fs::exists(encoder_dir / "kind.txt")) {
    encoder = load_encoder(encoder_dir);
  } else if (!cfg.encoder_dir.empty()) {
    encoder = load_encoder(cfg.encoder_dir);
    fs::create_directories(encoder_dir);
    for (const auto& entry : fs::directory_iterator(cfg.encoder_dir)) {
      if (entry.is_regular_file())
        fs::copy_file(entry.path(), encoder_dir / entry.path().filename(), fs::copy_options::overwrite_existing);
    }
  } else {
    encoder = pretrain_encoder_to(cfg, encoder_dir);
  }

  // The run directory owns its encoder copy, so the resolved config points at it.
  RunConfig resolved = cfg;
  resolved.encoder_dir = "encoder";
  write_text(out_dir / "config.txt", format_config(resolved));
  write_text(out_dir / "run_info.txt", std::string("version ") + version_stamp() + "\nvariant " + cfg.variant +
                                           "\nseed " + std::to_string(cfg.seed) + "\nencoder_seed " +
                                           std::to_string(cfg.encoder_seed) + "\n");

  train::Trainer trainer(train_config(cfg, out_dir), encoder);
  if (resume && fs::exists(out_dir / "latest" / "manifest.txt")) trainer.resume(out_dir / "latest");
  trainer.run(progress);
}

LoadedRun load_run(const fs::path& run_dir, const std::optional<fs::path>& checkpoint) {
  LoadedRun run;
  run.config = load_config(run_dir / "config.txt");
  find_variant(run.config.variant);
  run.encoder = load_encoder(run_dir / "encoder");
  run.nets = train::load_networks(checkpoint.value_or(run_dir / "latest"));
  env::TaskEnv probe(env_options(run.config), run.encoder);
  if (run.nets.feature_scale.size() != probe.observation_dim())
    throw std::runtime_error("checkpoint does not match the run config: observation size " +
                             std::to_string(run.nets.feature_scale.size()) + " vs " +
                             std::to_string(probe.observation_dim()));
  return run;
}

std::string to_string(Outcome o) {
  switch (o) {
    case Outcome::Success: return "success";
    case Outcome::Collision: return "collision";
    case Outcome::Timeout: return "timeout";
  }
  return "timeout";
}

std::uint64_t eval_episode_seed(std::uint64_t eval_seed, int k) {
  return train::derive_seed(eval_seed, 4, static_cast<std::uint64_t>(k));
}

namespace {

struct PolicyOutput {
  Eigen::Vector4d action;
  Eigen::VectorXd quantiles;
};

PolicyOutput evaluate_policy(const LoadedRun& run, const env::Observation& obs) {
  const Eigen::VectorXd f = run.nets.features(obs);
  PolicyOutput out{nn::forward(run.nets.actor.mean_net, f), dce::predict_quantiles(run.nets.dce, f).values};
  if (!out.action.allFinite()) throw nn::DivergenceError("policy produced a non-finite action");
  return out;
}

double pusher_offset_error(const geom::WorldState& w, const geom::KinematicLimits& limits) {
  if (!limits.pinned_pusher_offset) return 0.0;
  const geom::Vec2 expected = w.base.position() + geom::rotate(geom::Vec2(*limits.pinned_pusher_offset, 0.0), w.base.yaw);
  return (w.pusher - expected).norm();
}

}  // namespace

EpisodeRecord run_episode(const LoadedRun& run, const env::EpisodeConfig& episode, std::uint64_t seed) {
  auto opts = env_options(run.config);
  opts.episode = episode;
  env::TaskEnv e(opts, run.encoder);
  const auto limits = opts.limits();
  EpisodeRecord rec;
  rec.seed = seed;
  rec.scenario = episode.scenario;
  rec.object_size = episode.object_size;
  env::Observation obs = e.reset(seed);
  rec.schedule_hash = e.schedule().hash();
  for (;;) {
    const auto out = evaluate_policy(run, obs);
    rec.uncertainty.push_back(dce::risk_and_uncertainty(out.quantiles).uncertainty);
    rec.max_pusher_offset_error = std::max(rec.max_pusher_offset_error, pusher_offset_error(e.world(), limits));
    const auto res = e.step(geom::Action::from_vector(out.action));
    ++rec.steps;
    for (const auto& s : res.spawns) {
      if (s.placed && s.time > 0.0) {
        rec.spawn_steps.push_back(rec.steps);
        break;
      }
    }
    obs = res.observation;
    if (res.terminal) {
      rec.outcome = res.collision ? Outcome::Collision : res.success ? Outcome::Success : Outcome::Timeout;
      break;
    }
  }
  rec.max_pusher_offset_error = std::max(rec.max_pusher_offset_error, pusher_offset_error(e.world(), limits));
  rec.uncertainty.push_back(dce::risk_and_uncertainty(evaluate_policy(run, obs).quantiles).uncertainty);
  rec.final_uncertainty = rec.uncertainty.back();
  return rec;
}

EvalReport run_eval(const LoadedRun& run, const EvalOptions& options) {
  if (options.episodes < 1) throw std::invalid_argument("evaluation needs at least one episode");
  EvalReport report;
  report.variant = run.config.variant;
  report.train_seed = run.config.seed;
  report.eval_seed = options.seed;

  struct Job {
    std::size_t cell;
    int k;
  };
  std::vector<Job> jobs;
  for (auto scenario : options.scenarios) {
    for (double size : options.object_sizes) {
      EvalCell cell;
      cell.scenario = scenario;
      cell.object_size = size;
      cell.records.resize(static_cast<std::size_t>(options.episodes));
      for (int k = 0; k < options.episodes; ++k) jobs.push_back({report.cells.size(), k});
      report.cells.push_back(std::move(cell));
    }
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t j; (j = next.fetch_add(1)) < jobs.size();) {
      auto& cell = report.cells[jobs[j].cell];
      env::EpisodeConfig ep = run.config.episode;
      ep.scenario = cell.scenario;
      ep.object_size = cell.object_size;
      if (options.obstacle_count) {
        ep.obstacle_count = *options.obstacle_count;
      }
      try {
        cell.records[static_cast<std::size_t>(jobs[j].k)] = run_episode(run, ep, eval_episode_seed(options.seed, jobs[j].k));
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = jobs.size();
      }
    }
  };
  const int threads = std::max(1, std::min<int>(options.jobs, static_cast<int>(jobs.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  for (auto& cell : report.cells) {
    cell.episodes = static_cast<int>(cell.records.size());
    double s = 0, c = 0, t = 0, len = 0, u = 0;
    for (const auto& r : cell.records) {
      s += r.outcome == Outcome::Success;
      c += r.outcome == Outcome::Collision;
      t += r.outcome == Outcome::Timeout;
      len += r.steps;
      u += r.final_uncertainty;
    }
    const double n = cell.episodes;
    cell.success_rate = s / n;
    cell.collision_rate = c / n;
    cell.timeout_rate = t / n;
    cell.mean_length = len / n;
    cell.mean_final_uncertainty = u / n;
  }
  return report;
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

const char* kReportHeader =
    "variant,train_seed,eval_seed,scenario,object_size,episodes,success_rate,collision_rate,timeout_rate,"
    "mean_length,mean_final_uncertainty";

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(item);
  return out;
}

}  // namespace

void write_report_csv(const EvalReport& report, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  int episodes = report.cells.empty() ? 0 : report.cells.front().episodes;
  out << "# desk-scale evaluation: " << episodes << " paired episodes per cell, deterministic mean action, "
      << "episode seeds derived from eval_seed " << report.eval_seed << ", version " << version_stamp() << '\n';
  out << kReportHeader << '\n';
  for (const auto& c : report.cells) {
    out << report.variant << ',' << report.train_seed << ',' << report.eval_seed << ',' << env::to_string(c.scenario)
        << ',' << fmt(c.object_size) << ',' << c.episodes << ',' << fmt(c.success_rate) << ','
        << fmt(c.collision_rate) << ',' << fmt(c.timeout_rate) << ',' << fmt(c.mean_length) << ','
        << fmt(c.mean_final_uncertainty) << '\n';
  }
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

void write_episodes_csv(const EvalReport& report, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  out << "variant,scenario,object_size,episode_seed,outcome,steps,final_uncertainty,schedule_hash,spawn_events,"
         "post_spawn_slope\n";
  for (const auto& c : report.cells) {
    for (const auto& r : c.records) {
      const auto slope = post_spawn_uncertainty_slope(r);
      out << report.variant << ',' << env::to_string(r.scenario) << ',' << fmt(r.object_size) << ',' << r.seed << ','
          << to_string(r.outcome) << ',' << r.steps << ',' << fmt(r.final_uncertainty) << ',' << r.schedule_hash
          << ',' << r.spawn_steps.size() << ',' << (slope ? fmt(*slope) : std::string("nan")) << '\n';
    }
  }
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::vector<EvalReport> read_report_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<EvalReport> reports;
  bool header_seen = false;
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line != kReportHeader) throw std::runtime_error("unexpected report header in " + path.string());
      header_seen = true;
      continue;
    }
    const auto f = split_csv(line);
    if (f.size() != 11) throw std::runtime_error("malformed report row in " + path.string());
    const auto train_seed = std::stoull(f[1]);
    const auto eval_seed = std::stoull(f[2]);
    if (reports.empty() || reports.back().variant != f[0] || reports.back().train_seed != train_seed ||
        reports.back().eval_seed != eval_seed) {
      reports.push_back({f[0], train_seed, eval_seed, {}});
    }
    EvalCell c;
    c.scenario = env::scenario_from_string(f[3]);
    c.object_size = std::stod(f[4]);
    c.episodes = std::stoi(f[5]);
    c.success_rate = std::stod(f[6]);
    c.collision_rate = std::stod(f[7]);
    c.timeout_rate = std::stod(f[8]);
    c.mean_length = std::stod(f[9]);
    c.mean_final_uncertainty = std::stod(f[10]);
    reports.back().cells.push_back(std::move(c));
  }
  return reports;
}

std::string format_success_table(const std::vector<EvalReport>& reports) {
  std::vector<std::pair<env::Scenario, double>> columns;
  std::vector<std::string> rows;
  std::map<std::string, std::map<std::pair<int, double>, std::pair<double, int>>> acc;
  for (const auto& r : reports) {
    if (std::find(rows.begin(), rows.end(), r.variant) == rows.end()) rows.push_back(r.variant);
    for (const auto& c : r.cells) {
      const std::pair<env::Scenario, double> col{c.scenario, c.object_size};
      if (std::find(columns.begin(), columns.end(), col) == columns.end()) columns.push_back(col);
      auto& slot = acc[r.variant][{static_cast<int>(c.scenario), c.object_size}];
      slot.first += c.success_rate;
      slot.second += 1;
    }
  }
  std::sort(columns.begin(), columns.end(), [](const auto& a, const auto& b) {
    return std::pair(static_cast<int>(a.first), a.second) < std::pair(static_cast<int>(b.first), b.second);
  });
  std::string out = "| variant |";
  for (const auto& [s, size] : columns) out += " " + env::to_string(s) + " " + fmt(size) + " |";
  out += "\n|---|";
  for (std::size_t i = 0; i < columns.size(); ++i) out += "---|";
  out += "\n";
  for (const auto& v : rows) {
    out += "| " + v + " |";
    for (const auto& [s, size] : columns) {
      const auto it = acc[v].find({static_cast<int>(s), size});
      if (it == acc[v].end()) {
        out += " - |";
      } else {
        char buf[32];
        std::snprintf(buf, sizeof buf, " %.2f |", 100.0 * it->second.first / it->second.second);
        out += buf;
      }
    }
    out += "\n";
  }
  return out;
}

std::optional<double> post_spawn_uncertainty_slope(const EpisodeRecord& record, int window) {
  std::vector<double> slopes;
  for (int s : record.spawn_steps) {
    const int end = std::min<int>(s + window, static_cast<int>(record.uncertainty.size()) - 1);
    if (end - s < 1) continue;
    slopes.push_back(stats::linear_slope(
        std::span<const double>(record.uncertainty.data() + s, static_cast<std::size_t>(end - s + 1))));
  }
  if (slopes.empty()) return std::nullopt;
  return stats::mean(slopes);
}

namespace {

std::string hex_action(const geom::Action& a) {
  const Eigen::Vector4d v = a.as_vector();
  char buf[160];
  std::snprintf(buf, sizeof buf, "%a %a %a %a", v[0], v[1], v[2], v[3]);
  return buf;
}

geom::Action parse_hex_action(const std::string& line) {
  Eigen::Vector4d v;
  const char* p = line.c_str();
  for (int i = 0; i < 4; ++i) {
    char* end = nullptr;
    v[i] = std::strtod(p, &end);
    if (end == p) throw std::runtime_error("malformed action line: " + line);
    p = end;
  }
  return geom::Action::from_vector(v);
}

}  // namespace

DumpResult dump_trajectory(const LoadedRun& run, const env::EpisodeConfig& episode, std::uint64_t seed,
                           const fs::path& out_dir) {
  fs::create_directories(out_dir / "maps");
  RunConfig cfg = run.config;
  cfg.episode = episode;
  write_text(out_dir / "config.txt", format_config(cfg));

  auto opts = env_options(cfg);
  env::TaskEnv e(opts, run.encoder);
  std::ofstream trace(out_dir / "trace.txt"), exact(out_dir / "trace_exact.txt"), actions(out_dir / "actions.txt"),
      quantiles(out_dir / "quantiles.csv");
  for (int j = 0; j < run.nets.dce.output_dim(); ++j) quantiles << (j ? "," : "") << "q" << (j + 1);
  quantiles << '\n';

  auto record_state = [&](int step, const Eigen::VectorXd& q) {
    trace << geom::format_state(e.world()) << '\n';
    exact << geom::format_state_exact(e.world()) << '\n';
    for (Eigen::Index j = 0; j < q.size(); ++j) quantiles << (j ? "," : "") << fmt(q[j]);
    quantiles << '\n';
    char name[32];
    std::snprintf(name, sizeof name, "map_%04d.pgm", step);
    perception::write_pgm(out_dir / "maps" / name, e.map());
  };

  DumpResult result;
  env::Observation obs = e.reset(seed);
  for (;;) {
    const auto out = evaluate_policy(run, obs);
    record_state(result.steps, out.quantiles);
    const auto res = e.step(geom::Action::from_vector(out.action));
    actions << hex_action(res.applied_action) << '\n';
    ++result.steps;
    obs = res.observation;
    if (res.terminal) {
      result.outcome = res.collision ? Outcome::Collision : res.success ? Outcome::Success : Outcome::Timeout;
      break;
    }
  }
  record_state(result.steps, evaluate_policy(run, obs).quantiles);
  write_text(out_dir / "summary.txt", "seed " + std::to_string(seed) + "\nscenario " + env::to_string(episode.scenario) +
                                          "\nobject_size " + fmt(episode.object_size) + "\nsteps " +
                                          std::to_string(result.steps) + "\noutcome " + to_string(result.outcome) +
                                          "\n");
  if (!trace || !exact || !actions || !quantiles) throw std::runtime_error("cannot write dump in " + out_dir.string());
  return result;
}

double state_distance(const geom::WorldState& a, const geom::WorldState& b) {
  if (a.obstacles.size() != b.obstacles.size()) return std::numeric_limits<double>::infinity();
  double d = std::abs(a.sim_time - b.sim_time);
  auto pose = [&](const geom::Pose2D& p, const geom::Pose2D& q) {
    d = std::max({d, std::abs(p.x - q.x), std::abs(p.y - q.y), std::abs(p.yaw - q.yaw)});
  };
  auto rect = [&](const geom::OrientedRect& p, const geom::OrientedRect& q) {
    pose(p.pose, q.pose);
    d = std::max({d, std::abs(p.half_width - q.half_width), std::abs(p.half_depth - q.half_depth)});
  };
  pose(a.base, b.base);
  pose(a.goal, b.goal);
  d = std::max(d, (a.pusher - b.pusher).cwiseAbs().maxCoeff());
  rect(a.object, b.object);
  for (std::size_t i = 0; i < a.obstacles.size(); ++i) rect(a.obstacles[i], b.obstacles[i]);
  return d;
}

ReplayResult replay_trajectory(const fs::path& dump_dir) {
  const auto cfg = load_config(dump_dir / "config.txt");
  const auto opts = env_options(cfg);
  const auto limits = opts.limits();
  std::ifstream exact(dump_dir / "trace_exact.txt"), actions(dump_dir / "actions.txt");
  if (!exact || !actions) throw std::runtime_error("incomplete dump in " + dump_dir.string());
  std::vector<geom::WorldState> states;
  for (std::string line; std::getline(exact, line);) states.push_back(geom::parse_state(line));
  std::vector<geom::Action> acts;
  for (std::string line; std::getline(actions, line);) acts.push_back(parse_hex_action(line));
  if (states.size() != acts.size() + 1) throw std::runtime_error("trace and action counts disagree");

  ReplayResult r;
  geom::WorldState sim = states.front();
  for (std::size_t t = 0; t < acts.size(); ++t) {
    sim = geom::step_kinematics(sim, acts[t], opts.episode.dt, limits);
    // Obstacles appear from the schedule; take any new ones from the recording.
    const auto& rec = states[t + 1];
    for (std::size_t i = sim.obstacles.size(); i < rec.obstacles.size(); ++i) sim.obstacles.push_back(rec.obstacles[i]);
    r.max_error = std::max(r.max_error, state_distance(sim, rec));
    ++r.steps;
  }
  return r;
}

}  // namespace cura::exp
