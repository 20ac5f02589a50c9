#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace cura::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

// Raised when a NaN/Inf reaches a loss, gradient, or network output.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Fully connected network, tanh on hidden layers and a linear output layer.
// All parameters live in one flat vector: for each layer, the column-major
// weight matrix (out x in) followed by the bias.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<int> layer_sizes);

  // Uniform fan-in initialisation; the output layer is scaled by `output_scale`.
  static Mlp initialized(std::vector<int> layer_sizes, Rng& rng, double output_scale = 1.0);

  const std::vector<int>& layer_sizes() const { return sizes_; }
  int num_layers() const { return static_cast<int>(sizes_.size()) - 1; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }

  Eigen::Map<const Matrix> weight(int layer) const;
  Eigen::Map<Matrix> weight(int layer);
  Eigen::Map<const Vector> bias(int layer) const;
  Eigen::Map<Vector> bias(int layer);

  Vector& params() { return params_; }
  const Vector& params() const { return params_; }

 private:
  std::vector<int> sizes_;
  std::vector<std::size_t> offsets_;
  Vector params_;
};

// Activations recorded by forward() for a subsequent backward().
struct MlpCache {
  std::vector<Matrix> layer_inputs;
  bool valid() const { return !layer_inputs.empty(); }
};

// Columns of `x` are samples. Throws std::invalid_argument on dimension mismatch.
Matrix forward(const Mlp& net, const Matrix& x, MlpCache* cache = nullptr);
Vector forward(const Mlp& net, const Vector& x);

// Accumulates parameter gradients into `param_grad` (sized like net.params())
// and returns the gradient with respect to the input batch.
Matrix backward(const Mlp& net, const MlpCache& cache, const Matrix& output_grad, Vector& param_grad);

// Diagonal Gaussian policy with a state-independent log standard deviation.
struct GaussianPolicy {
  static constexpr double kLogStdMin = -5.0;
  static constexpr double kLogStdMax = 2.0;

  Mlp mean_net;
  Vector log_std;

  void clamp_log_std();
};

struct ActionSample {
  Vector action;
  Vector mean;
  double log_prob = 0.0;
};

double gaussian_log_prob(const Vector& mean, const Vector& log_std, const Vector& action);
// d log_prob / d mean and d log_prob / d log_std.
void gaussian_log_prob_grad(const Vector& mean, const Vector& log_std, const Vector& action,
                            Vector& d_mean, Vector& d_log_std);
double gaussian_entropy(const Vector& log_std);

// Samples from the policy at `features`; the log-prob is for the returned, unclamped action.
ActionSample log_prob_and_sample(const GaussianPolicy& policy, const Vector& features, Rng& rng);

struct AdamState {
  std::int64_t step = 0;
  Vector m;
  Vector v;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_size(Eigen::Index n, double lr);
};

// Throws DivergenceError if any gradient entry is not finite.
void adam_step(Vector& params, const Vector& grads, AdamState& state);

bool all_finite(const Eigen::Ref<const Matrix>& m);

// Binary checkpoint: magic, version, layer-size manifest, then little-endian
// 64-bit floats (network parameters followed by `extra`).
void save_checkpoint(const std::filesystem::path& path, const Mlp& net, const Vector& extra = {});
struct Checkpoint {
  Mlp net;
  Vector extra;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

void save_adam(const std::filesystem::path& path, const AdamState& state);
AdamState load_adam(const std::filesystem::path& path);

}  // namespace cura::nn
