#pragma once

#include "cura/dce.hpp"
#include "cura/nn.hpp"
#include "cura/task_env.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace cura::train {

using nn::Matrix;
using nn::Vector;

struct CuraHyperparams {
  double lambda_r = 0.25;
  double lambda_u = 1.0;
  double clip_eps = 0.2;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  int epochs = 4;
  int minibatch = 256;
  int num_envs = 8;
  int horizon = 256;
  double entropy_coef = 0.005;
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  double dce_lr = 3e-4;
  double max_grad_norm = 0.5;
  double gamma_c = dce::kDefaultCollisionDiscount;
  int quantiles = dce::kDefaultQuantiles;
  int hidden = 128;
  double init_log_std = -0.5;
  // Rewards are multiplied by this before they reach the critic and GAE.
  double reward_scale = 0.05;
  // Timeouts cut the episode short, so the value path bootstraps from V(o_T)
  // there. Risk and uncertainty still treat every terminal as final.
  bool bootstrap_timeouts = true;

  void validate() const;
};

// Actor, critic and DCE are separate networks fed the same scaled observation.
struct Networks {
  nn::GaussianPolicy actor;
  nn::Mlp critic;
  nn::Mlp dce;
  Vector feature_scale;

  Vector features(const env::Observation& obs) const;
};

Networks make_networks(int obs_dim, int action_dim, const Vector& feature_scale, const CuraHyperparams& hp,
                       nn::Rng& rng);

struct OptimizerStates {
  nn::AdamState actor;
  nn::AdamState log_std;
  nn::AdamState critic;
  nn::AdamState dce;

  static OptimizerStates for_networks(const Networks& nets, const CuraHyperparams& hp);
};

struct EpisodeOutcomes {
  int completed = 0;
  int successes = 0;
  int collisions = 0;
  int timeouts = 0;
};

// Flat storage; transition (t, env) lives at column t * num_envs + env.
struct RolloutBatch {
  int num_envs = 0;
  int horizon = 0;
  Matrix features;
  Matrix actions;
  Vector log_probs;
  Vector rewards;
  Vector values;
  Vector risks;
  Vector uncertainties;
  std::vector<std::uint8_t> collisions;
  std::vector<std::uint8_t> terminals;
  std::vector<std::uint8_t> successes;
  std::vector<std::uint8_t> timeouts;
  Vector terminal_values;  // V(o_{t+1}) at success and timeout terminals, else 0
  Matrix next_quantiles;  // DCE at o_{t+1} under the snapshot
  Vector next_values;
  Vector next_risks;
  Vector next_uncertainties;
  EpisodeOutcomes outcomes;

  int size() const { return num_envs * horizon; }
  void allocate(int envs, int steps, int obs_dim, int action_dim, int quantiles);
};

// Resets environment `env` for its k-th episode in the current collection.
using EpisodeResetter = std::function<env::Observation(env::TaskEnv& e, int env, int episode)>;

// Runs the snapshot policy for `horizon` steps in every environment,
// auto-resetting on terminal. Environments must already be reset.
RolloutBatch collect_rollouts(const Networks& snapshot, std::vector<env::TaskEnv>& envs,
                              std::vector<env::Observation>& current_obs, int horizon, nn::Rng& rng,
                              const EpisodeResetter& resetter);

struct AdvantageResult {
  Vector advantages;
  Vector value_targets;
};

AdvantageResult gae_advantages(const Vector& rewards, const Vector& values, const Vector& next_values,
                               const std::vector<std::uint8_t>& terminals, int num_envs, int horizon, double gamma,
                               double gae_lambda);

// Scaled rewards for the value path. A success ends the episode without
// ending the task, so its step also bootstraps from the terminal value; so
// does a timeout when `bootstrap_timeouts` is set.
Vector value_rewards(const RolloutBatch& batch, double reward_scale, double gamma, bool bootstrap_timeouts = false);

double risk_cost(int collision, bool terminal, double risk_t, double risk_next, double gamma_c);
double uncertainty_cost(double u_t, double u_next, bool terminal);

// (x - mean) / std over the batch (population std); all zeros when std < 1e-8.
Vector normalize_costs(const Vector& x);

struct CostSignals {
  Vector risk;
  Vector uncertainty;
  Vector risk_normalized;
  Vector uncertainty_normalized;
};
CostSignals compute_costs(const RolloutBatch& batch, double gamma_c);

// Advantage minus the weighted normalized costs.
Vector augmented_advantage(const Vector& advantages, const Vector& risk_norm, const Vector& uncertainty_norm,
                           double lambda_r, double lambda_u);

struct SurrogateResult {
  double loss = 0.0;  // negated mean of the clipped objective
  Vector d_log_prob;  // d loss / d log pi_new
};

// -mean_i min(rho_i psi_i, clip(rho_i, 1-eps, 1+eps) psi_i), rho = exp(logp_new - logp_old).
SurrogateResult clipped_surrogate(const Vector& logp_new, const Vector& logp_old, const Vector& psi, double eps);

// Plain clipped PPO objective on the advantages alone.
double ppo_actor_loss(const Vector& logp_new, const Vector& logp_old, const Vector& advantages, double eps);
double cura_actor_loss(const Vector& logp_new, const Vector& logp_old, const Vector& advantages,
                       const Vector& risk_norm, const Vector& uncertainty_norm, double lambda_r, double lambda_u,
                       double eps);

struct ActorGrads {
  Vector mean_net;
  Vector log_std;
};

// Clipped surrogate minus entropy bonus on one minibatch, with exact gradients.
double actor_minibatch_loss(const nn::GaussianPolicy& actor, const Matrix& features, const Matrix& actions,
                            const Vector& logp_old, const Vector& psi, double eps, double entropy_coef,
                            ActorGrads* grads);
double critic_minibatch_loss(const nn::Mlp& critic, const Matrix& features, const Vector& targets, Vector* grad);
double dce_minibatch_loss(const nn::Mlp& dce_net, const Matrix& features, const Matrix& targets, Vector* grad);

struct UpdateStats {
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  double dce_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
};

UpdateStats cura_update(Networks& nets, OptimizerStates& opt, const RolloutBatch& batch,
                        const AdvantageResult& adv, const CostSignals& costs, const CuraHyperparams& hp,
                        nn::Rng& rng);

struct TrainConfig {
  env::EnvOptions env;
  std::vector<env::Scenario> scenarios = {env::Scenario::Uniform, env::Scenario::Adversarial};
  std::vector<double> object_sizes = {1.0};
  CuraHyperparams hp;
  int iterations = 300;
  std::uint64_t seed = 1;
  int checkpoint_every = 50;
  std::filesystem::path out_dir;
};

struct IterationLog {
  int iteration = 0;
  double mean_reward = 0.0;
  double success_rate = 0.0;
  double collision_rate = 0.0;
  double mean_risk = 0.0;
  double mean_uncertainty = 0.0;
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  double dce_loss = 0.0;
  double entropy = 0.0;
  int episodes = 0;
};

std::string training_log_header();
std::string format_log_row(const IterationLog& row);

// Deterministic 64-bit seed derivation.
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

class Trainer {
 public:
  Trainer(TrainConfig config, std::shared_ptr<const perception::MapEncoder> encoder);

  // Runs one collect -> advantages -> costs -> update cycle.
  IterationLog run_iteration();
  // Runs until config.iterations, writing the CSV log and checkpoints into out_dir.
  void run(const std::function<void(const IterationLog&)>& on_iteration = {});

  void save(const std::filesystem::path& dir) const;
  // Restores networks, optimizer states and the iteration counter.
  void resume(const std::filesystem::path& dir);

  int iteration() const { return iteration_; }
  const Networks& networks() const { return nets_; }
  const TrainConfig& config() const { return config_; }

 private:
  env::EpisodeConfig episode_for(int iteration, int env, int episode) const;
  std::uint64_t episode_seed(int iteration, int env, int episode) const;

  TrainConfig config_;
  std::shared_ptr<const perception::MapEncoder> encoder_;
  std::vector<env::TaskEnv> envs_;
  Networks nets_;
  OptimizerStates opt_;
  int iteration_ = 0;
};

void save_networks(const std::filesystem::path& dir, const Networks& nets);
Networks load_networks(const std::filesystem::path& dir);

}  // namespace cura::train
