#include "cura/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace cura::train {

void CuraHyperparams::validate() const {
  if (lambda_r < 0.0 || lambda_u < 0.0) throw std::invalid_argument("cost weights must be non-negative");
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw std::invalid_argument("clip epsilon must lie in (0, 1)");
  if (!(gamma > 0.0 && gamma <= 1.0) || !(gae_lambda >= 0.0 && gae_lambda <= 1.0))
    throw std::invalid_argument("discounts must lie in (0, 1]");
  if (!(gamma_c > 0.0 && gamma_c < 1.0)) throw std::invalid_argument("collision discount must lie in (0, 1)");
  if (epochs < 1 || minibatch < 1 || num_envs < 1 || horizon < 1 || quantiles < 1 || hidden < 1)
    throw std::invalid_argument("epochs, minibatch, envs, horizon, quantiles and hidden must be positive");
  if (!(reward_scale > 0.0)) throw std::invalid_argument("reward scale must be positive");
}

Vector Networks::features(const env::Observation& obs) const {
  return obs.flatten().cwiseProduct(feature_scale);
}

Networks make_networks(int obs_dim, int action_dim, const Vector& feature_scale, const CuraHyperparams& hp,
                       nn::Rng& rng) {
  if (feature_scale.size() != obs_dim) throw std::invalid_argument("feature scale does not match observation size");
  Networks n;
  n.actor.mean_net = nn::Mlp::initialized({obs_dim, hp.hidden, hp.hidden, action_dim}, rng, 0.01);
  n.actor.log_std = Vector::Constant(action_dim, hp.init_log_std);
  n.actor.clamp_log_std();
  n.critic = nn::Mlp::initialized({obs_dim, hp.hidden, hp.hidden, 1}, rng, 1.0);
  n.dce = nn::Mlp::initialized({obs_dim, hp.hidden, hp.hidden, hp.quantiles}, rng, 0.01);
  n.feature_scale = feature_scale;
  return n;
}

OptimizerStates OptimizerStates::for_networks(const Networks& nets, const CuraHyperparams& hp) {
  return {nn::AdamState::for_size(nets.actor.mean_net.params().size(), hp.actor_lr),
          nn::AdamState::for_size(nets.actor.log_std.size(), hp.actor_lr),
          nn::AdamState::for_size(nets.critic.params().size(), hp.critic_lr),
          nn::AdamState::for_size(nets.dce.params().size(), hp.dce_lr)};
}

void RolloutBatch::allocate(int envs, int steps, int obs_dim, int action_dim, int quantiles) {
  num_envs = envs;
  horizon = steps;
  const int n = envs * steps;
  features.resize(obs_dim, n);
  actions.resize(action_dim, n);
  log_probs.resize(n);
  rewards.resize(n);
  values.resize(n);
  risks.resize(n);
  uncertainties.resize(n);
  collisions.assign(n, 0);
  terminals.assign(n, 0);
  successes.assign(n, 0);
  timeouts.assign(n, 0);
  terminal_values = Vector::Zero(n);
  next_quantiles.resize(quantiles, n);
  next_values.resize(n);
  next_risks.resize(n);
  next_uncertainties.resize(n);
  outcomes = {};
}

namespace {

void require_finite(const Matrix& m, const char* what, int step) {
  if (!m.allFinite()) {
    throw nn::DivergenceError(std::string("non-finite ") + what + " during rollout at step " + std::to_string(step));
  }
}

}  // namespace

RolloutBatch collect_rollouts(const Networks& snapshot, std::vector<env::TaskEnv>& envs,
                              std::vector<env::Observation>& current_obs, int horizon, nn::Rng& rng,
                              const EpisodeResetter& resetter) {
  const int num_envs = static_cast<int>(envs.size());
  const int obs_dim = static_cast<int>(snapshot.feature_scale.size());
  const int action_dim = snapshot.actor.mean_net.output_dim();
  const int nq = snapshot.dce.output_dim();
  RolloutBatch batch;
  batch.allocate(num_envs, horizon, obs_dim, action_dim, nq);

  std::vector<int> episode_index(num_envs, 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Vector std_dev = snapshot.actor.log_std.array().exp();
  Matrix feats(obs_dim, num_envs);

  auto evaluate = [&](int step, Matrix& means, Matrix& values, Matrix& quantiles) {
    for (int e = 0; e < num_envs; ++e) feats.col(e) = snapshot.features(current_obs[e]);
    require_finite(feats, "observation", step);
    means = nn::forward(snapshot.actor.mean_net, feats);
    values = nn::forward(snapshot.critic, feats);
    quantiles = nn::forward(snapshot.dce, feats);
    require_finite(means, "policy mean", step);
    require_finite(values, "value", step);
    require_finite(quantiles, "DCE quantiles", step);
  };

  Matrix means, values, quantiles;
  for (int t = 0; t < horizon; ++t) {
    evaluate(t, means, values, quantiles);
    for (int e = 0; e < num_envs; ++e) {
      const int i = t * num_envs + e;
      const auto ru = dce::risk_and_uncertainty(quantiles.col(e));
      if (t > 0) {
        const int prev = i - num_envs;
        batch.next_values[prev] = values(0, e);
        batch.next_quantiles.col(prev) = quantiles.col(e);
        batch.next_risks[prev] = ru.risk;
        batch.next_uncertainties[prev] = ru.uncertainty;
      }
      Vector action(action_dim);
      for (int k = 0; k < action_dim; ++k) action[k] = means(k, e) + std_dev[k] * normal(rng);
      batch.features.col(i) = feats.col(e);
      batch.actions.col(i) = action;
      batch.log_probs[i] = nn::gaussian_log_prob(means.col(e), snapshot.actor.log_std, action);
      batch.values[i] = values(0, e);
      batch.risks[i] = ru.risk;
      batch.uncertainties[i] = ru.uncertainty;

      const auto res = envs[e].step(geom::Action::from_vector(action));
      batch.rewards[i] = res.reward;
      batch.collisions[i] = static_cast<std::uint8_t>(res.collision);
      batch.terminals[i] = res.terminal ? 1 : 0;
      if (res.success || res.timeout) {
        (res.success ? batch.successes : batch.timeouts)[i] = 1;
        const Vector v = nn::forward(snapshot.critic, snapshot.features(res.observation));
        batch.terminal_values[i] = v[0];
      }
      if (res.terminal) {
        auto& o = batch.outcomes;
        ++o.completed;
        o.successes += res.success ? 1 : 0;
        o.collisions += res.collision;
        o.timeouts += res.timeout ? 1 : 0;
        current_obs[e] = resetter(envs[e], e, episode_index[e]++);
      } else {
        current_obs[e] = res.observation;
      }
    }
  }
  evaluate(horizon, means, values, quantiles);
  for (int e = 0; e < num_envs; ++e) {
    const int last = (horizon - 1) * num_envs + e;
    const auto ru = dce::risk_and_uncertainty(quantiles.col(e));
    batch.next_values[last] = values(0, e);
    batch.next_quantiles.col(last) = quantiles.col(e);
    batch.next_risks[last] = ru.risk;
    batch.next_uncertainties[last] = ru.uncertainty;
  }
  return batch;
}

Vector value_rewards(const RolloutBatch& batch, double reward_scale, double gamma, bool bootstrap_timeouts) {
  Vector r = reward_scale * batch.rewards;
  for (int i = 0; i < batch.size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (batch.successes[k] || (bootstrap_timeouts && batch.timeouts[k])) r[i] += gamma * batch.terminal_values[i];
  }
  return r;
}

AdvantageResult gae_advantages(const Vector& rewards, const Vector& values, const Vector& next_values,
                               const std::vector<std::uint8_t>& terminals, int num_envs, int horizon, double gamma,
                               double gae_lambda) {
  const int n = num_envs * horizon;
  if (rewards.size() != n || values.size() != n || next_values.size() != n || static_cast<int>(terminals.size()) != n)
    throw std::invalid_argument("GAE inputs must all have num_envs * horizon entries");
  AdvantageResult out{Vector(n), Vector(n)};
  for (int e = 0; e < num_envs; ++e) {
    double running = 0.0;
    for (int t = horizon - 1; t >= 0; --t) {
      const int i = t * num_envs + e;
      const double live = terminals[i] ? 0.0 : 1.0;
      const double delta = rewards[i] + gamma * next_values[i] * live - values[i];
      running = delta + gamma * gae_lambda * live * running;
      out.advantages[i] = running;
    }
  }
  out.value_targets = out.advantages + values;
  return out;
}

double risk_cost(int collision, bool terminal, double risk_t, double risk_next, double gamma_c) {
  return static_cast<double>(collision) + gamma_c * risk_next * (terminal ? 0.0 : 1.0) - risk_t;
}

double uncertainty_cost(double u_t, double u_next, bool terminal) { return u_next * (terminal ? 0.0 : 1.0) - u_t; }

Vector normalize_costs(const Vector& x) {
  if (x.size() == 0) return x;
  const double mean = x.mean();
  const double sd = std::sqrt((x.array() - mean).square().mean());
  if (sd < 1e-8) return Vector::Zero(x.size());
  return (x.array() - mean) / sd;
}

CostSignals compute_costs(const RolloutBatch& batch, double gamma_c) {
  const int n = batch.size();
  CostSignals c{Vector(n), Vector(n), {}, {}};
  for (int i = 0; i < n; ++i) {
    const bool term = batch.terminals[i] != 0;
    c.risk[i] = risk_cost(batch.collisions[i], term, batch.risks[i], batch.next_risks[i], gamma_c);
    c.uncertainty[i] = uncertainty_cost(batch.uncertainties[i], batch.next_uncertainties[i], term);
  }
  c.risk_normalized = normalize_costs(c.risk);
  c.uncertainty_normalized = normalize_costs(c.uncertainty);
  return c;
}

Vector augmented_advantage(const Vector& advantages, const Vector& risk_norm, const Vector& uncertainty_norm,
                           double lambda_r, double lambda_u) {
  return advantages - lambda_r * risk_norm - lambda_u * uncertainty_norm;
}

SurrogateResult clipped_surrogate(const Vector& logp_new, const Vector& logp_old, const Vector& psi, double eps) {
  const auto m = logp_new.size();
  if (logp_old.size() != m || psi.size() != m) throw std::invalid_argument("surrogate inputs differ in length");
  SurrogateResult r{0.0, Vector(m)};
  double sum = 0.0;
  const double inv = 1.0 / static_cast<double>(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double ratio = std::exp(logp_new[i] - logp_old[i]);
    const double unclipped = ratio * psi[i];
    const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps) * psi[i];
    const bool use_unclipped = unclipped <= clipped;
    sum += use_unclipped ? unclipped : clipped;
    r.d_log_prob[i] = use_unclipped ? -unclipped * inv : 0.0;
  }
  r.loss = -sum * inv;
  return r;
}

double ppo_actor_loss(const Vector& logp_new, const Vector& logp_old, const Vector& advantages, double eps) {
  return clipped_surrogate(logp_new, logp_old, advantages, eps).loss;
}

double cura_actor_loss(const Vector& logp_new, const Vector& logp_old, const Vector& advantages,
                       const Vector& risk_norm, const Vector& uncertainty_norm, double lambda_r, double lambda_u,
                       double eps) {
  return clipped_surrogate(logp_new, logp_old,
                           augmented_advantage(advantages, risk_norm, uncertainty_norm, lambda_r, lambda_u), eps)
      .loss;
}

double actor_minibatch_loss(const nn::GaussianPolicy& actor, const Matrix& features, const Matrix& actions,
                            const Vector& logp_old, const Vector& psi, double eps, double entropy_coef,
                            ActorGrads* grads) {
  nn::MlpCache cache;
  const Matrix means = nn::forward(actor.mean_net, features, grads ? &cache : nullptr);
  const auto m = features.cols();
  Vector logp(m);
  for (Eigen::Index i = 0; i < m; ++i) logp[i] = nn::gaussian_log_prob(means.col(i), actor.log_std, actions.col(i));
  const auto surr = clipped_surrogate(logp, logp_old, psi, eps);
  const double loss = surr.loss - entropy_coef * nn::gaussian_entropy(actor.log_std);
  if (!std::isfinite(loss)) throw nn::DivergenceError("actor loss is not finite");
  if (grads) {
    Matrix d_mean(means.rows(), m);
    grads->log_std = Vector::Constant(actor.log_std.size(), -entropy_coef);
    Vector dm, dls;
    for (Eigen::Index i = 0; i < m; ++i) {
      nn::gaussian_log_prob_grad(means.col(i), actor.log_std, actions.col(i), dm, dls);
      d_mean.col(i) = surr.d_log_prob[i] * dm;
      grads->log_std += surr.d_log_prob[i] * dls;
    }
    grads->mean_net = Vector::Zero(actor.mean_net.params().size());
    nn::backward(actor.mean_net, cache, d_mean, grads->mean_net);
  }
  return loss;
}

double critic_minibatch_loss(const nn::Mlp& critic, const Matrix& features, const Vector& targets, Vector* grad) {
  nn::MlpCache cache;
  const Matrix v = nn::forward(critic, features, grad ? &cache : nullptr);
  const Eigen::RowVectorXd diff = v.row(0) - targets.transpose();
  const double m = static_cast<double>(features.cols());
  const double loss = diff.squaredNorm() / m;
  if (!std::isfinite(loss)) throw nn::DivergenceError("critic loss is not finite");
  if (grad) {
    *grad = Vector::Zero(critic.params().size());
    nn::backward(critic, cache, (2.0 / m) * diff, *grad);
  }
  return loss;
}

double dce_minibatch_loss(const nn::Mlp& dce_net, const Matrix& features, const Matrix& targets, Vector* grad) {
  nn::MlpCache cache;
  const Matrix q = nn::forward(dce_net, features, grad ? &cache : nullptr);
  const auto m = features.cols();
  Matrix dq(q.rows(), m);
  double loss = 0.0;
  Vector g(q.rows());
  for (Eigen::Index i = 0; i < m; ++i) {
    loss += dce::energy_distance_loss_into(q.col(i), targets.col(i), g);
    dq.col(i) = g / static_cast<double>(m);
  }
  loss /= static_cast<double>(m);
  if (!std::isfinite(loss)) throw nn::DivergenceError("DCE loss is not finite");
  if (grad) {
    *grad = Vector::Zero(dce_net.params().size());
    nn::backward(dce_net, cache, dq, *grad);
  }
  return loss;
}

namespace {

void clip_by_norm(Vector& g, double max_norm) {
  if (max_norm <= 0.0) return;
  const double n = g.norm();
  if (n > max_norm) g *= max_norm / n;
}

Matrix gather_cols(const Matrix& m, const std::vector<int>& idx) {
  Matrix out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = m.col(idx[k]);
  return out;
}

Vector gather(const Vector& v, const std::vector<int>& idx) {
  Vector out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out[static_cast<Eigen::Index>(k)] = v[idx[k]];
  return out;
}

}  // namespace

UpdateStats cura_update(Networks& nets, OptimizerStates& opt, const RolloutBatch& batch,
                        const AdvantageResult& adv, const CostSignals& costs, const CuraHyperparams& hp,
                        nn::Rng& rng) {
  const int n = batch.size();
  const Vector psi = augmented_advantage(normalize_costs(adv.advantages), costs.risk_normalized,
                                         costs.uncertainty_normalized, hp.lambda_r, hp.lambda_u);

  // Bellman targets from the snapshot DCE, fixed for the whole update.
  const dce::CollisionDiscount discount{hp.gamma_c};
  Matrix dce_targets(batch.next_quantiles.rows(), n);
  for (int i = 0; i < n; ++i) {
    dce::bellman_targets_into(batch.collisions[i], batch.terminals[i] != 0, batch.next_quantiles.col(i), discount,
                              dce_targets.col(i));
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  UpdateStats stats;
  int updates = 0;
  double clipped = 0.0;
  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (int start = 0; start < n; start += hp.minibatch) {
      const std::vector<int> idx(order.begin() + start, order.begin() + std::min(n, start + hp.minibatch));
      const Matrix f = gather_cols(batch.features, idx);
      const Matrix a = gather_cols(batch.actions, idx);
      const Vector lp_old = gather(batch.log_probs, idx);
      const Vector mb_psi = gather(psi, idx);

      ActorGrads ag;
      stats.actor_loss += actor_minibatch_loss(nets.actor, f, a, lp_old, mb_psi, hp.clip_eps, hp.entropy_coef, &ag);
      {
        const Matrix means = nn::forward(nets.actor.mean_net, f);
        for (Eigen::Index k = 0; k < f.cols(); ++k) {
          const double ratio =
              std::exp(nn::gaussian_log_prob(means.col(k), nets.actor.log_std, a.col(k)) - lp_old[k]);
          clipped += std::abs(ratio - 1.0) > hp.clip_eps ? 1.0 : 0.0;
        }
      }
      Vector joint(ag.mean_net.size() + ag.log_std.size());
      joint << ag.mean_net, ag.log_std;
      clip_by_norm(joint, hp.max_grad_norm);
      nn::adam_step(nets.actor.mean_net.params(), joint.head(ag.mean_net.size()), opt.actor);
      nn::adam_step(nets.actor.log_std, joint.tail(ag.log_std.size()), opt.log_std);
      nets.actor.clamp_log_std();

      Vector cg;
      stats.critic_loss += critic_minibatch_loss(nets.critic, f, gather(adv.value_targets, idx), &cg);
      clip_by_norm(cg, hp.max_grad_norm);
      nn::adam_step(nets.critic.params(), cg, opt.critic);

      Vector dg;
      stats.dce_loss += dce_minibatch_loss(nets.dce, f, gather_cols(dce_targets, idx), &dg);
      clip_by_norm(dg, hp.max_grad_norm);
      nn::adam_step(nets.dce.params(), dg, opt.dce);
      ++updates;
    }
  }
  if (updates > 0) {
    stats.actor_loss /= updates;
    stats.critic_loss /= updates;
    stats.dce_loss /= updates;
    stats.clip_fraction = clipped / (static_cast<double>(updates) * hp.minibatch);
  }
  stats.entropy = nn::gaussian_entropy(nets.actor.log_std);
  return stats;
}

std::string training_log_header() {
  return "iteration,mean_reward,success_rate,collision_rate,mean_risk,mean_uncertainty,actor_loss,critic_loss,"
         "dce_loss,entropy,episodes";
}

std::string format_log_row(const IterationLog& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%d", r.iteration, r.mean_reward,
                r.success_rate, r.collision_rate, r.mean_risk, r.mean_uncertainty, r.actor_loss, r.critic_loss,
                r.dce_loss, r.entropy, r.episodes);
  return buf;
}

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(root);
  h = mix(h ^ a);
  h = mix(h ^ b);
  return mix(h ^ c);
}

Trainer::Trainer(TrainConfig config, std::shared_ptr<const perception::MapEncoder> encoder)
    : config_(std::move(config)), encoder_(std::move(encoder)) {
  config_.hp.validate();
  if (config_.scenarios.empty() || config_.object_sizes.empty())
    throw std::invalid_argument("training needs at least one scenario and one object size");
  envs_.reserve(config_.hp.num_envs);
  for (int e = 0; e < config_.hp.num_envs; ++e) envs_.emplace_back(config_.env, encoder_);
  const int obs_dim = envs_.front().observation_dim();
  nn::Rng init_rng(derive_seed(config_.seed, 0));
  nets_ = make_networks(obs_dim, 4, env::feature_scale(envs_.front().latent_dim()), config_.hp, init_rng);
  opt_ = OptimizerStates::for_networks(nets_, config_.hp);
}

std::uint64_t Trainer::episode_seed(int iteration, int env, int episode) const {
  return derive_seed(config_.seed, 2, static_cast<std::uint64_t>(iteration),
                     static_cast<std::uint64_t>(env) * 1000003ull + static_cast<std::uint64_t>(episode));
}

env::EpisodeConfig Trainer::episode_for(int iteration, int env, int episode) const {
  const auto pick = derive_seed(config_.seed, 3, static_cast<std::uint64_t>(iteration),
                                static_cast<std::uint64_t>(env) * 1000003ull + static_cast<std::uint64_t>(episode));
  env::EpisodeConfig cfg = config_.env.episode;
  cfg.scenario = config_.scenarios[pick % config_.scenarios.size()];
  cfg.object_size = config_.object_sizes[(pick >> 32) % config_.object_sizes.size()];
  return cfg;
}

IterationLog Trainer::run_iteration() {
  const int iter = iteration_ + 1;
  nn::Rng rng(derive_seed(config_.seed, 1, static_cast<std::uint64_t>(iter)));
  auto resetter = [&](env::TaskEnv& e, int env_index, int episode) {
    e.set_episode_config(episode_for(iter, env_index, episode));
    return e.reset(episode_seed(iter, env_index, episode));
  };
  std::vector<env::Observation> obs;
  obs.reserve(envs_.size());
  for (int e = 0; e < static_cast<int>(envs_.size()); ++e) obs.push_back(resetter(envs_[e], e, 0));

  RolloutBatch batch;
  AdvantageResult adv;
  CostSignals costs;
  UpdateStats stats;
  try {
    batch = collect_rollouts(nets_, envs_, obs, config_.hp.horizon, rng, resetter);
    adv = gae_advantages(value_rewards(batch, config_.hp.reward_scale, config_.hp.gamma, config_.hp.bootstrap_timeouts), batch.values,
                         batch.next_values, batch.terminals, batch.num_envs, batch.horizon,
                         config_.hp.gamma, config_.hp.gae_lambda);
    costs = compute_costs(batch, config_.hp.gamma_c);
    stats = cura_update(nets_, opt_, batch, adv, costs, config_.hp, rng);
  } catch (const nn::DivergenceError& e) {
    throw nn::DivergenceError("iteration " + std::to_string(iter) + ": " + e.what());
  }

  IterationLog log;
  log.iteration = iter;
  log.mean_reward = batch.rewards.mean();
  log.episodes = batch.outcomes.completed;
  if (log.episodes > 0) {
    log.success_rate = static_cast<double>(batch.outcomes.successes) / log.episodes;
    log.collision_rate = static_cast<double>(batch.outcomes.collisions) / log.episodes;
  }
  log.mean_risk = batch.risks.mean();
  log.mean_uncertainty = batch.uncertainties.mean();
  log.actor_loss = stats.actor_loss;
  log.critic_loss = stats.critic_loss;
  log.dce_loss = stats.dce_loss;
  log.entropy = stats.entropy;
  iteration_ = iter;
  return log;
}

void Trainer::run(const std::function<void(const IterationLog&)>& on_iteration) {
  if (config_.out_dir.empty()) throw std::invalid_argument("training needs an output directory");
  std::filesystem::create_directories(config_.out_dir);
  const auto log_path = config_.out_dir / "training_log.csv";
  std::ofstream log;
  if (iteration_ == 0) {
    log.open(log_path, std::ios::trunc);
    log << training_log_header() << '\n';
  } else {
    // Drop rows past the resume point so the log stays one row per iteration.
    std::vector<std::string> keep;
    std::ifstream in(log_path);
    for (std::string line; std::getline(in, line);) {
      if (keep.empty() || std::stoi(line.substr(0, line.find(','))) <= iteration_) keep.push_back(line);
    }
    in.close();
    log.open(log_path, std::ios::trunc);
    for (const auto& l : keep) log << l << '\n';
  }
  if (!log) throw std::runtime_error("cannot write training log in " + config_.out_dir.string());

  while (iteration_ < config_.iterations) {
    const auto row = run_iteration();
    log << format_log_row(row) << '\n';
    log.flush();
    if (on_iteration) on_iteration(row);
    if (iteration_ % config_.checkpoint_every == 0 || iteration_ == config_.iterations) {
      char name[32];
      std::snprintf(name, sizeof name, "iter_%06d", iteration_);
      save(config_.out_dir / "checkpoints" / name);
      save(config_.out_dir / "latest");
    }
  }
}

void save_networks(const std::filesystem::path& dir, const Networks& nets) {
  std::filesystem::create_directories(dir);
  nn::save_checkpoint(dir / "actor.bin", nets.actor.mean_net, nets.actor.log_std);
  nn::save_checkpoint(dir / "critic.bin", nets.critic, nets.feature_scale);
  nn::save_checkpoint(dir / "dce.bin", nets.dce);
}

Networks load_networks(const std::filesystem::path& dir) {
  auto actor = nn::load_checkpoint(dir / "actor.bin");
  auto critic = nn::load_checkpoint(dir / "critic.bin");
  auto dce_ck = nn::load_checkpoint(dir / "dce.bin");
  Networks n;
  n.actor.mean_net = std::move(actor.net);
  n.actor.log_std = std::move(actor.extra);
  n.critic = std::move(critic.net);
  n.feature_scale = std::move(critic.extra);
  n.dce = std::move(dce_ck.net);
  const int obs_dim = n.actor.mean_net.input_dim();
  if (n.critic.input_dim() != obs_dim || n.dce.input_dim() != obs_dim || n.feature_scale.size() != obs_dim ||
      n.actor.log_std.size() != n.actor.mean_net.output_dim())
    throw std::runtime_error("inconsistent network checkpoint in " + dir.string());
  return n;
}

void Trainer::save(const std::filesystem::path& dir) const {
  save_networks(dir, nets_);
  nn::save_adam(dir / "actor_adam.bin", opt_.actor);
  nn::save_adam(dir / "log_std_adam.bin", opt_.log_std);
  nn::save_adam(dir / "critic_adam.bin", opt_.critic);
  nn::save_adam(dir / "dce_adam.bin", opt_.dce);
  std::ofstream m(dir / "manifest.txt");
  m << "iteration " << iteration_ << '\n'
    << "seed " << config_.seed << '\n'
    << "next_iteration_rng_seed " << derive_seed(config_.seed, 1, static_cast<std::uint64_t>(iteration_ + 1)) << '\n'
    << "networks actor.bin critic.bin dce.bin\n";
}

void Trainer::resume(const std::filesystem::path& dir) {
  std::ifstream m(dir / "manifest.txt");
  if (!m) throw std::runtime_error("no manifest in " + dir.string());
  std::string key;
  int iteration = -1;
  std::uint64_t seed = 0;
  while (m >> key) {
    if (key == "iteration") m >> iteration;
    else if (key == "seed") m >> seed;
    else m.ignore(std::numeric_limits<std::streamsize>::max(), '\n');
  }
  if (iteration < 0) throw std::runtime_error("manifest lacks an iteration count: " + dir.string());
  if (seed != config_.seed) throw std::runtime_error("checkpoint seed does not match the training config");
  Networks loaded = load_networks(dir);
  if (loaded.feature_scale.size() != nets_.feature_scale.size())
    throw std::runtime_error("checkpoint observation size does not match the environment");
  nets_ = std::move(loaded);
  opt_.actor = nn::load_adam(dir / "actor_adam.bin");
  opt_.log_std = nn::load_adam(dir / "log_std_adam.bin");
  opt_.critic = nn::load_adam(dir / "critic_adam.bin");
  opt_.dce = nn::load_adam(dir / "dce_adam.bin");
  iteration_ = iteration;
}

}  // namespace cura::train
