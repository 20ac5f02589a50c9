// Acceptance checks. One PASS/FAIL line per criterion.
//
//   acceptance [--workdir DIR]          fast checks (1-5, 11, 12); 6-10 are
//                                        scored from DIR if a long run finished
//   acceptance --long [--workdir DIR]   also trains and evaluates everything
//                                        criteria 6-10 need (resumable)

#include "cura/dce.hpp"
#include "cura/experiment.hpp"
#include "cura/geometry.hpp"
#include "cura/nn.hpp"
#include "cura/perception.hpp"
#include "cura/stats.hpp"
#include "cura/trainer.hpp"

#include "../oracles.hpp"
#include "../toy_chain.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using namespace cura;
using nn::Matrix;
using nn::Vector;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, bool pass, const std::string& what, const std::string& detail) {
  std::printf("%s criterion %d: %s (%s)\n", pass ? "PASS" : "FAIL", id, what.c_str(), detail.c_str());
  std::fflush(stdout);
  failures += pass ? 0 : 1;
}

void report_skip(int id, const std::string& what, const std::string& why) {
  std::printf("SKIP criterion %d: %s (%s)\n", id, what.c_str(), why.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

Vector random_vec(Eigen::Index n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = oracle::uniform(rng, lo, hi);
  return v;
}

// ---------------------------------------------------------------- 1

void confidence_map_exactness() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1);
  perception::ConfidenceMap map(geom::Vec2(-6, -6), 0.1, 120, 120, 0.9);
  double worst = 0.0;
  bool observed_exact = true;
  // Scan from a few random poses, then let everything decay while tracking
  // each cell's own last-observed step.
  Eigen::MatrixXi last_seen = Eigen::MatrixXi::Constant(120, 120, -1);
  for (int step = 0; step < 60; ++step) {
    perception::LidarScan scan;
    if (step < 8) {
      geom::WorldState w;
      w.base = {oracle::uniform(rng, -2, 2), oracle::uniform(rng, -2, 2), oracle::uniform(rng, -3, 3)};
      w.object = oracle::random_rect(rng, 3.0, 0.2, 0.6);
      for (int k = 0; k < 3; ++k) w.obstacles.push_back(oracle::random_rect(rng, 4.0, 0.2, 0.5));
      scan = perception::simulate_lidar(w, 180, 5.0);
      map.update(scan, w.base);
    } else {
      map.update(scan, {0, 0, 0});
    }
    for (int y = 0; y < 120; ++y) {
      for (int x = 0; x < 120; ++x) {
        if (map.observed_at_current_step(x, y)) {
          last_seen(x, y) = step;
          observed_exact &= map.value(x, y) == 1.0;
        } else if (last_seen(x, y) >= 0) {
          worst = std::max(worst, std::abs(map.value(x, y) - std::pow(0.9, step - last_seen(x, y))));
        } else {
          worst = std::max(worst, std::abs(map.value(x, y)));
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  report(1, worst <= 1e-12 && observed_exact && secs < 1.0, "confidence map decays as alpha^k, observed cells are 1",
         fmt("max |value - 0.9^k| = %.3g, observed exact = %.0f, %.2f s", worst, observed_exact ? 1.0 : 0.0, secs));
}

// ---------------------------------------------------------------- 2

double fd_rel_error(const Vector& analytic, const std::function<double(const Vector&)>& f, const Vector& at) {
  return oracle::rel_error(analytic, oracle::finite_diff(f, at));
}

void gradient_suite() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2);
  double plain = 0.0, logprob = 0.0, energy = 0.0, surrogate = 0.0, losses = 0.0, vae = 0.0;
  const int instances = 20;

  for (int k = 0; k < instances; ++k) {
    nn::Rng init(static_cast<std::uint64_t>(k));
    // Plain layers: the actor, critic and DCE shapes with a random linear readout.
    for (const std::vector<int>& sizes : {std::vector<int>{9, 16, 16, 4}, {9, 16, 16, 1}, {9, 16, 16, 50}}) {
      nn::Mlp net = nn::Mlp::initialized(sizes, init, 0.7);
      const Matrix x = Matrix::NullaryExpr(9, 3, [&] { return oracle::uniform(rng, -1, 1); });
      const Matrix w = Matrix::NullaryExpr(sizes.back(), 3, [&] { return oracle::uniform(rng, -1, 1); });
      nn::MlpCache cache;
      nn::forward(net, x, &cache);
      Vector g = Vector::Zero(net.params().size());
      nn::backward(net, cache, w, g);
      plain = std::max(plain, fd_rel_error(g,
                                           [&](const Vector& p) {
                                             nn::Mlp n = net;
                                             n.params() = p;
                                             return (nn::forward(n, x).array() * w.array()).sum();
                                           },
                                           net.params()));
    }

    const Vector mean = random_vec(4, rng), log_std = random_vec(4, rng, -1.0, 0.5), act = random_vec(4, rng);
    Vector dm, dls;
    nn::gaussian_log_prob_grad(mean, log_std, act, dm, dls);
    logprob = std::max(logprob, fd_rel_error(dm, [&](const Vector& m) { return nn::gaussian_log_prob(m, log_std, act); }, mean));
    logprob = std::max(logprob, fd_rel_error(dls, [&](const Vector& l) { return nn::gaussian_log_prob(mean, l, act); }, log_std));

    const Vector pred = random_vec(50, rng, 0.0, 10.0), target = random_vec(50, rng, 0.0, 10.0);
    const auto ed = dce::energy_distance_loss(dce::QuantileSet{pred}, dce::QuantileSet{target});
    energy = std::max(energy, oracle::rel_error(ed.grad, oracle::finite_diff(
                                                             [&](const Vector& p) {
                                                               return dce::energy_distance_loss(dce::QuantileSet{p},
                                                                                                dce::QuantileSet{target})
                                                                   .loss;
                                                             },
                                                             pred, 1e-7)));

    // Critic and DCE losses through their networks.
    {
      const nn::Mlp critic = nn::Mlp::initialized({6, 12, 1}, init, 1.0);
      const nn::Mlp dnet = nn::Mlp::initialized({6, 12, 10}, init, 1.0);
      const Matrix f = Matrix::NullaryExpr(6, 4, [&] { return oracle::uniform(rng, -1, 1); });
      const Vector tv = random_vec(4, rng, -2, 2);
      const Matrix tq = Matrix::NullaryExpr(10, 4, [&] { return oracle::uniform(rng, 0, 3); });
      Vector gc, gd;
      train::critic_minibatch_loss(critic, f, tv, &gc);
      train::dce_minibatch_loss(dnet, f, tq, &gd);
      losses = std::max(losses, fd_rel_error(gc,
                                             [&](const Vector& p) {
                                               nn::Mlp n = critic;
                                               n.params() = p;
                                               return train::critic_minibatch_loss(n, f, tv, nullptr);
                                             },
                                             critic.params()));
      losses = std::max(losses, fd_rel_error(gd,
                                             [&](const Vector& p) {
                                               nn::Mlp n = dnet;
                                               n.params() = p;
                                               return train::dce_minibatch_loss(n, f, tq, nullptr);
                                             },
                                             dnet.params()));
    }

    // VAE encoder and decoder with fixed reparameterization noise.
    {
      const nn::Mlp enc = nn::Mlp::initialized({12, 10, 6}, init, 0.5);
      const nn::Mlp dec = nn::Mlp::initialized({3, 10, 12}, init, 0.5);
      const Matrix x = Matrix::NullaryExpr(12, 3, [&] { return oracle::uniform(rng, -1, 1); });
      const Matrix eps = Matrix::NullaryExpr(3, 3, [&] { return oracle::uniform(rng, -1, 1); });
      Vector ge, gd;
      perception::vae_loss(enc, dec, x, eps, 0.05, &ge, &gd);
      vae = std::max(vae, fd_rel_error(ge,
                                       [&](const Vector& p) {
                                         nn::Mlp n = enc;
                                         n.params() = p;
                                         return perception::vae_loss(n, dec, x, eps, 0.05, nullptr, nullptr);
                                       },
                                       enc.params()));
      vae = std::max(vae, fd_rel_error(gd,
                                       [&](const Vector& p) {
                                         nn::Mlp n = dec;
                                         n.params() = p;
                                         return perception::vae_loss(enc, n, x, eps, 0.05, nullptr, nullptr);
                                       },
                                       dec.params()));
    }
  }

  // Full CURA surrogate on 4-transition batches, away from the clip kinks.
  for (int done = 0, s = 0; done < instances; ++s) {
    nn::Rng init(1000 + static_cast<std::uint64_t>(s));
    nn::GaussianPolicy actor;
    actor.mean_net = nn::Mlp::initialized({5, 8, 8, 4}, init, 0.5);
    actor.log_std = random_vec(4, rng, -0.8, 0.0);
    const Matrix f = Matrix::NullaryExpr(5, 4, [&] { return oracle::uniform(rng, -1, 1); });
    const Matrix a = Matrix::NullaryExpr(4, 4, [&] { return oracle::uniform(rng, -1, 1); });
    const Matrix means = nn::forward(actor.mean_net, f);
    Vector lp_old(4);
    bool kink = false;
    for (int i = 0; i < 4; ++i) {
      const double lp = nn::gaussian_log_prob(means.col(i), actor.log_std, a.col(i));
      lp_old[i] = lp + oracle::uniform(rng, -0.4, 0.4);
      const double ratio = std::exp(lp - lp_old[i]);
      kink |= std::abs(ratio - 1.2) < 0.02 || std::abs(ratio - 0.8) < 0.02;
    }
    if (kink) continue;
    ++done;
    const Vector psi = train::augmented_advantage(train::normalize_costs(random_vec(4, rng, -2, 2)),
                                                  train::normalize_costs(random_vec(4, rng)),
                                                  train::normalize_costs(random_vec(4, rng)), 0.25, 1.0);
    train::ActorGrads g;
    train::actor_minibatch_loss(actor, f, a, lp_old, psi, 0.2, 0.005, &g);
    Vector analytic(g.mean_net.size() + 4), flat(g.mean_net.size() + 4);
    analytic << g.mean_net, g.log_std;
    flat << actor.mean_net.params(), actor.log_std;
    surrogate = std::max(surrogate, fd_rel_error(analytic,
                                                 [&](const Vector& p) {
                                                   nn::GaussianPolicy pol = actor;
                                                   pol.mean_net.params() = p.head(actor.mean_net.params().size());
                                                   pol.log_std = p.tail(4);
                                                   return train::actor_minibatch_loss(pol, f, a, lp_old, psi, 0.2,
                                                                                      0.005, nullptr);
                                                 },
                                                 flat));
  }

  const double secs = seconds_since(t0);
  const double worst = std::max({logprob, energy, surrogate, losses, vae});
  const bool pass = plain < 1e-4 && worst < 1e-3 && secs < 60.0;
  std::ostringstream d;
  d.precision(3);
  d << "20 instances each; plain layers " << plain << ", log-prob " << logprob << ", energy distance " << energy
    << ", critic/DCE losses " << losses << ", VAE " << vae << ", CURA surrogate " << surrogate << ", " << secs
    << " s";
  report(2, pass, "analytic gradients match central finite differences", d.str());
}

// ---------------------------------------------------------------- 3

void toy_chain() {
  const auto t0 = Clock::now();
  const auto net = toy::train_dce(300, 17);
  double worst_risk = 0.0, worst_ks = 0.0, worst_w1 = 0.0;
  for (int s = 0; s < toy::kStates; ++s) {
    const auto q = dce::predict_quantiles(net, toy::one_hot(s));
    worst_risk = std::max(worst_risk, std::abs(dce::risk_and_uncertainty(q).risk - toy::analytic_risk(s)));
    const auto mc = toy::monte_carlo(s, 100000, 500 + static_cast<std::uint64_t>(s));
    const std::vector<double> atoms(q.values.begin(), q.values.end());
    worst_ks = std::max(worst_ks, stats::ks_distance(atoms, mc));
    worst_w1 = std::max(worst_w1, toy::wasserstein1(atoms, mc));
  }
  const double secs = seconds_since(t0);
  report(3, worst_risk <= 0.5 && worst_ks < 0.15 && secs < 300.0,
         "toy-chain DCE matches analytic risk and Monte-Carlo CDFs",
         fmt("max |risk error| = %.3f (limit 0.5), max KS = %.3f (limit 0.15), ", worst_risk, worst_ks) +
             fmt("max W1 = %.3f, %.1f s", worst_w1, secs));
}

// ---------------------------------------------------------------- 4

void energy_distance_properties() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(4);
  bool self_zero = true, nonneg = true;
  double asym = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const int n = 1 + static_cast<int>(rng() % 50);
    const Vector p = random_vec(n, rng, 0.0, 10.0), t = random_vec(n, rng, 0.0, 10.0);
    Vector perm = p;
    std::shuffle(perm.begin(), perm.end(), rng);
    self_zero &= dce::energy_distance_loss(dce::QuantileSet{p}, dce::QuantileSet{perm}).loss == 0.0;
    const double ab = dce::energy_distance_loss(dce::QuantileSet{p}, dce::QuantileSet{t}).loss;
    const double ba = dce::energy_distance_loss(dce::QuantileSet{t}, dce::QuantileSet{p}).loss;
    nonneg &= ab >= 0.0 && ba >= 0.0;
    asym = std::max(asym, std::abs(ab - ba));
  }
  const double secs = seconds_since(t0);
  report(4, self_zero && nonneg && asym < 1e-12 && secs < 5.0, "energy distance is zero on equal multisets, >= 0, symmetric",
         fmt("1000 pairs, max |l(p,t) - l(t,p)| = %.3g, %.3f s", asym, secs));
}

// ---------------------------------------------------------------- 5

void ppo_degeneracy() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(5);
  const int n = 256;
  const Vector lp_new = random_vec(n, rng, -5, -1), lp_old = lp_new + random_vec(n, rng, -0.5, 0.5);
  const Vector adv = train::normalize_costs(random_vec(n, rng, -3, 3));
  const Vector cr = train::normalize_costs(random_vec(n, rng)), cu = train::normalize_costs(random_vec(n, rng));
  const double ppo = train::ppo_actor_loss(lp_new, lp_old, adv, 0.2);
  const double cura = train::cura_actor_loss(lp_new, lp_old, adv, cr, cu, 0.0, 0.0, 0.2);
  const bool same = std::memcmp(&ppo, &cura, sizeof(double)) == 0;
  const double secs = seconds_since(t0);
  report(5, same && secs < 1.0, "zero cost weights give bitwise-identical PPO actor losses",
         fmt("PPO %.17g vs CURA %.17g, %.3f s", ppo, cura, secs));
}

// ---------------------------------------------------------------- 11

void raycast_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(11);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    std::vector<geom::OrientedRect> bodies;
    const int n = 1 + static_cast<int>(rng() % 4);
    for (int k = 0; k < n; ++k) bodies.push_back(oracle::random_rect(rng, 4.0));
    const geom::Vec2 origin(oracle::uniform(rng, -5, 5), oracle::uniform(rng, -5, 5));
    const double angle = oracle::uniform(rng, -geom::kPi, geom::kPi);
    const double got = geom::ray_cast(origin, angle, bodies, 10.0).distance;
    worst = std::max(worst, std::abs(got - oracle::bisection_ray(origin, angle, bodies, 10.0).first));
  }
  const double secs = seconds_since(t0);
  report(11, worst < 1e-6 && secs < 10.0, "ray casts agree with the bisection oracle",
         fmt("10000 cases, max error %.3g m, %.2f s", worst, secs));
}

// ---------------------------------------------------------------- 12

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void determinism_and_replay(const fs::path& scratch) {
  exp::RunConfig cfg;
  cfg.variant = "cura_ppo";
  cfg.iterations = 3;
  cfg.checkpoint_every = 3;
  cfg.encoder = "pool";
  cfg.sensor.beam_count = 60;
  cfg.hp.num_envs = 2;
  cfg.hp.horizon = 32;
  cfg.hp.minibatch = 32;
  const auto a = scratch / "det_a", b = scratch / "det_b", dump = scratch / "det_dump";
  for (const auto& d : {a, b, dump}) fs::remove_all(d);
  exp::run_training(cfg, a);
  exp::run_training(cfg, b);
  const std::string la = slurp(a / "training_log.csv"), lb = slurp(b / "training_log.csv");
  const bool same_logs = !la.empty() && la == lb;

  const auto run = exp::load_run(a);
  auto ep = run.config.episode;
  ep.scenario = env::Scenario::Adversarial;
  ep.fixed_obstacle_count = true;
  const auto res = exp::dump_trajectory(run, ep, 12, dump);
  const auto rep = exp::replay_trajectory(dump);
  report(12, same_logs && rep.steps == res.steps && rep.max_error <= 1e-9,
         "equal seeds give bit-identical logs; dumps replay exactly",
         fmt("logs identical = %.0f, replayed %.0f steps, max state error %.3g", same_logs ? 1.0 : 0.0, static_cast<double>(rep.steps),
             rep.max_error));
  for (const auto& d : {a, b, dump}) fs::remove_all(d);
}

// ---------------------------------------------------------------- long criteria

const std::vector<std::string> kVariants = {"push_no_occlusion", "push_with_occlusion", "cura_ppo",
                                            "baseline_conf",     "cura_no_uncertainty", "cura_no_risk"};
const std::vector<std::uint64_t> kSeeds = {1, 2, 3};
constexpr int kIterations = 300;
constexpr int kEvalEpisodes = 300;
constexpr std::uint64_t kEvalSeed = 1000;

int log_rows(const fs::path& run) {
  std::ifstream in(run / "training_log.csv");
  int rows = -1;
  for (std::string l; std::getline(in, l);) rows += l.empty() ? 0 : 1;
  return std::max(rows, 0);
}

double read_number(const fs::path& p, double fallback) {
  std::ifstream in(p);
  double v = fallback;
  if (in) in >> v;
  return v;
}

// Trains (or resumes) one run; returns the wall-clock seconds spent in total.
double ensure_trained(exp::RunConfig cfg, const fs::path& dir) {
  const auto seconds_file = dir / "train_seconds.txt";
  if (log_rows(dir) >= cfg.iterations && fs::exists(dir / "latest" / "manifest.txt"))
    return read_number(seconds_file, 0.0);
  const bool resume = fs::exists(dir / "latest" / "manifest.txt");
  const double before = resume ? read_number(seconds_file, 0.0) : 0.0;
  std::printf("  training %s (%s)\n", dir.filename().c_str(), resume ? "resuming" : "fresh");
  std::fflush(stdout);
  const auto t0 = Clock::now();
  exp::run_training(cfg, dir, resume, [&](const train::IterationLog& row) {
    if (row.iteration % 25 == 0) {
      std::printf("    iter %d reward %.3f success %.3f\n", row.iteration, row.mean_reward, row.success_rate);
      std::fflush(stdout);
    }
    std::ofstream(seconds_file) << before + seconds_since(t0) << '\n';
  });
  const double total = before + seconds_since(t0);
  std::ofstream(seconds_file) << total << '\n';
  return total;
}

void ensure_evaluated(const fs::path& run_dir, const fs::path& out, const exp::EvalOptions& opts) {
  if (fs::exists(out / "eval.csv") && fs::exists(out / "episodes.csv")) return;
  std::printf("  evaluating %s\n", run_dir.filename().c_str());
  std::fflush(stdout);
  const auto rep = exp::run_eval(exp::load_run(run_dir), opts);
  fs::create_directories(out);
  exp::write_episodes_csv(rep, out / "episodes.csv.tmp");
  exp::write_report_csv(rep, out / "eval.csv.tmp");
  fs::rename(out / "episodes.csv.tmp", out / "episodes.csv");
  fs::rename(out / "eval.csv.tmp", out / "eval.csv");
}

exp::RunConfig base_run(const fs::path& work, const std::string& variant, std::uint64_t seed) {
  exp::RunConfig cfg;
  cfg.variant = variant;
  cfg.seed = seed;
  cfg.iterations = kIterations;
  cfg.encoder_dir = (work / "encoder").string();
  return cfg;
}

fs::path sanity_dir(const fs::path& w) { return w / "sanity"; }
fs::path run_dir(const fs::path& w, const std::string& v, std::uint64_t s) {
  return w / "runs" / (v + "_s" + std::to_string(s));
}
fs::path eval_dir(const fs::path& w, const std::string& v, std::uint64_t s) {
  return w / "eval" / (v + "_s" + std::to_string(s));
}

void run_long(const fs::path& work) {
  fs::create_directories(work);
  if (!fs::exists(work / "encoder" / "kind.txt")) {
    std::printf("  pretraining the shared map encoder\n");
    std::fflush(stdout);
    exp::pretrain_encoder_to(exp::RunConfig{}, work / "encoder");
  }

  auto sanity = base_run(work, "push_no_occlusion", 1);
  sanity.episode.obstacle_count = 0;
  ensure_trained(sanity, sanity_dir(work));
  exp::EvalOptions sopts;
  sopts.scenarios = {env::Scenario::Uniform};
  sopts.object_sizes = {1.0};
  sopts.episodes = 100;
  sopts.seed = kEvalSeed;
  sopts.obstacle_count = 0;
  ensure_evaluated(sanity_dir(work), work / "eval" / "sanity", sopts);

  exp::EvalOptions opts;
  opts.object_sizes = {1.0};
  opts.episodes = kEvalEpisodes;
  opts.seed = kEvalSeed;
  for (const auto& v : kVariants) {
    for (auto s : kSeeds) {
      ensure_trained(base_run(work, v, s), run_dir(work, v, s));
      ensure_evaluated(run_dir(work, v, s), eval_dir(work, v, s), opts);
    }
  }
}

struct LongResults {
  double sanity_success = 0.0;
  double sanity_seconds = 0.0;
  std::map<std::string, std::map<env::Scenario, double>> success;  // mean over seeds, in [0, 1]
  std::map<std::string, std::map<std::uint64_t, fs::path>> episodes;
};

std::optional<LongResults> load_long(const fs::path& work) {
  LongResults r;
  const auto sanity_csv = work / "eval" / "sanity" / "eval.csv";
  if (!fs::exists(sanity_csv)) return std::nullopt;
  const auto s = exp::read_report_csv(sanity_csv);
  if (s.empty() || s[0].cells.empty()) return std::nullopt;
  r.sanity_success = s[0].cells[0].success_rate;
  r.sanity_seconds = read_number(sanity_dir(work) / "train_seconds.txt", 1e30);
  for (const auto& v : kVariants) {
    for (auto seed : kSeeds) {
      const auto csv = eval_dir(work, v, seed) / "eval.csv";
      if (!fs::exists(csv)) return std::nullopt;
      const auto reports = exp::read_report_csv(csv);
      for (const auto& cell : reports.at(0).cells)
        r.success[v][cell.scenario] += cell.success_rate / static_cast<double>(kSeeds.size());
      r.episodes[v][seed] = eval_dir(work, v, seed) / "episodes.csv";
    }
  }
  return r;
}

// seed -> slope (NaN when undefined) for the Adversarial episodes of one run.
std::vector<std::pair<std::uint64_t, double>> adversarial_slopes(const fs::path& episodes_csv) {
  std::ifstream in(episodes_csv);
  std::vector<std::pair<std::uint64_t, double>> out;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() < 10 || f[1] != "adversarial") continue;
    out.emplace_back(std::stoull(f[3]), f[9] == "nan" ? std::nan("") : std::stod(f[9]));
  }
  return out;
}

std::string pct(double x) { return fmt("%.1f%%", 100.0 * x); }

void score_long(const LongResults& r) {
  using env::Scenario;
  report(6, r.sanity_success >= 0.8 && r.sanity_seconds <= 1800.0,
         "no-obstacle object-filtered training reaches >= 80% success within 300 iterations and 30 min",
         "success " + pct(r.sanity_success) + " over 100 episodes, training " + fmt("%.0f s", r.sanity_seconds));

  auto S = [&](const std::string& v, Scenario s) { return r.success.at(v).at(s); };
  bool c7 = true;
  std::ostringstream d7;
  for (auto sc : {Scenario::Uniform, Scenario::Adversarial}) {
    const double cura = S("cura_ppo", sc), with = S("push_with_occlusion", sc), without = S("push_no_occlusion", sc);
    c7 &= cura - with >= 0.10 && without >= cura && cura >= with;
    d7 << env::to_string(sc) << ": no_occlusion " << pct(without) << ", cura " << pct(cura) << ", with_occlusion "
       << pct(with) << "; ";
  }
  report(7, c7, "cura_ppo beats push_with_occlusion by >= 10 points; no_occlusion >= cura >= with_occlusion",
         d7.str() + "3 seeds x 300 episodes, object size 1.0");

  const std::vector<std::string> chain = {"cura_no_risk", "cura_no_uncertainty", "baseline_conf",
                                          "push_with_occlusion"};
  int violations = 0;
  bool within_tie = true;
  std::ostringstream d8;
  for (std::size_t i = 0; i < chain.size(); ++i) {
    d8 << chain[i] << ' ' << pct(S(chain[i], Scenario::Adversarial)) << (i + 1 < chain.size() ? " >= " : "");
    if (i + 1 < chain.size()) {
      const double gap = S(chain[i], Scenario::Adversarial) - S(chain[i + 1], Scenario::Adversarial);
      if (gap < 0.0) {
        ++violations;
        within_tie &= gap >= -0.02;
      }
    }
  }
  report(8, violations == 0 || (violations == 1 && within_tie), "ablation ordering on Adversarial, size 1.0",
         d8.str() + fmt(" (%.0f violations)", violations));

  bool c9 = true;
  std::ostringstream d9;
  for (const auto& v : kVariants) {
    const double u = S(v, Scenario::Uniform), a = S(v, Scenario::Adversarial);
    c9 &= u >= a;
    d9 << v << ' ' << pct(u) << '/' << pct(a) << "; ";
  }
  report(9, c9, "Uniform success >= Adversarial success for every variant", d9.str() + "uniform/adversarial");

  // Paired episode-level slopes, first 100 Adversarial episodes with a usable spawn event in both runs.
  std::vector<double> cura_slopes, base_slopes;
  const auto cs = adversarial_slopes(r.episodes.at("cura_ppo").at(kSeeds.front()));
  const auto bs = adversarial_slopes(r.episodes.at("push_with_occlusion").at(kSeeds.front()));
  for (std::size_t k = 0; k < std::min(cs.size(), bs.size()) && cura_slopes.size() < 100; ++k) {
    if (cs[k].first != bs[k].first || std::isnan(cs[k].second) || std::isnan(bs[k].second)) continue;
    cura_slopes.push_back(cs[k].second);
    base_slopes.push_back(bs[k].second);
  }
  const auto w = stats::wilcoxon_signed_rank(cura_slopes, base_slopes, stats::Alternative::Less);
  report(10, cura_slopes.size() == 100 && w.p_value < 0.05,
         "post-spawn uncertainty falls faster under cura_ppo than push_with_occlusion",
         fmt("%.0f paired episodes, mean slope %.4g vs %.4g", static_cast<double>(cura_slopes.size()),
             stats::mean(cura_slopes), stats::mean(base_slopes)) +
             fmt(", signed-rank p = %.3g", w.p_value));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  bool long_mode = false;
  std::string workdir = "acceptance_work";
  app.add_flag("--long", long_mode, "Train and evaluate what criteria 6-10 need (hours; resumable)");
  app.add_option("--workdir", workdir, "Directory for long-run artifacts");
  CLI11_PARSE(app, argc, argv);
  const fs::path work(workdir);

  confidence_map_exactness();
  gradient_suite();
  toy_chain();
  energy_distance_properties();
  ppo_degeneracy();

  if (long_mode) run_long(work);
  const auto long_results = load_long(work);
  if (long_results) {
    score_long(*long_results);
  } else {
    const std::string why = "needs a finished long run: acceptance --long --workdir " + work.string();
    report_skip(6, "sanity training", why);
    report_skip(7, "variant ordering", why);
    report_skip(8, "ablation ordering", why);
    report_skip(9, "occlusion monotonicity", why);
    report_skip(10, "post-spawn uncertainty slope", why);
  }

  raycast_oracle();
  fs::create_directories(work);
  determinism_and_replay(work);

  std::printf("%d failed\n", failures);
  return failures == 0 ? 0 : 1;
}
