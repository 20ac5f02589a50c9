#include "cura/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>

namespace cura::nn {

Mlp::Mlp(std::vector<int> layer_sizes) : sizes_(std::move(layer_sizes)) {
  if (sizes_.size() < 2) throw std::invalid_argument("Mlp needs at least input and output sizes");
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    if (sizes_[l] <= 0 || sizes_[l + 1] <= 0) throw std::invalid_argument("Mlp layer sizes must be positive");
    offsets_.push_back(total);
    total += static_cast<std::size_t>(sizes_[l]) * sizes_[l + 1] + sizes_[l + 1];
  }
  params_ = Vector::Zero(static_cast<Eigen::Index>(total));
}

Mlp Mlp::initialized(std::vector<int> layer_sizes, Rng& rng, double output_scale) {
  Mlp net(std::move(layer_sizes));
  for (int l = 0; l < net.num_layers(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(net.sizes_[l]));
    std::uniform_real_distribution<double> dist(-bound, bound);
    auto w = net.weight(l);
    const double scale = (l == net.num_layers() - 1) ? output_scale : 1.0;
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = scale * dist(rng);
  }
  return net;
}

Eigen::Map<const Matrix> Mlp::weight(int layer) const {
  return {params_.data() + offsets_.at(layer), sizes_[layer + 1], sizes_[layer]};
}
Eigen::Map<Matrix> Mlp::weight(int layer) {
  return {params_.data() + offsets_.at(layer), sizes_[layer + 1], sizes_[layer]};
}
Eigen::Map<const Vector> Mlp::bias(int layer) const {
  return {params_.data() + offsets_.at(layer) + static_cast<std::size_t>(sizes_[layer]) * sizes_[layer + 1],
          sizes_[layer + 1]};
}
Eigen::Map<Vector> Mlp::bias(int layer) {
  return {params_.data() + offsets_.at(layer) + static_cast<std::size_t>(sizes_[layer]) * sizes_[layer + 1],
          sizes_[layer + 1]};
}

Matrix forward(const Mlp& net, const Matrix& x, MlpCache* cache) {
  if (x.rows() != net.input_dim()) {
    throw std::invalid_argument("Mlp input dimension " + std::to_string(x.rows()) + " != " +
                                std::to_string(net.input_dim()));
  }
  if (cache) cache->layer_inputs.clear();
  Matrix h = x;
  for (int l = 0; l < net.num_layers(); ++l) {
    if (cache) cache->layer_inputs.push_back(h);
    Matrix z = net.weight(l) * h;
    z.colwise() += net.bias(l);
    if (l + 1 < net.num_layers()) z = z.array().tanh().matrix();
    h = std::move(z);
  }
  return h;
}

Vector forward(const Mlp& net, const Vector& x) {
  return forward(net, Matrix(x), nullptr).col(0);
}

Matrix backward(const Mlp& net, const MlpCache& cache, const Matrix& output_grad, Vector& param_grad) {
  if (!cache.valid() || static_cast<int>(cache.layer_inputs.size()) != net.num_layers())
    throw std::logic_error("backward called without a cached forward pass");
  if (param_grad.size() != net.params().size()) param_grad = Vector::Zero(net.params().size());
  if (output_grad.rows() != net.output_dim() || output_grad.cols() != cache.layer_inputs[0].cols())
    throw std::invalid_argument("output gradient shape does not match the cached batch");

  Matrix g = output_grad;
  const double* base = net.params().data();
  for (int l = net.num_layers() - 1; l >= 0; --l) {
    const Matrix& in = cache.layer_inputs[l];
    const auto w = net.weight(l);
    const std::size_t w_off = static_cast<std::size_t>(w.data() - base);
    Eigen::Map<Matrix> dw(param_grad.data() + w_off, w.rows(), w.cols());
    Eigen::Map<Vector> db(param_grad.data() + w_off + w.size(), w.rows());
    dw.noalias() += g * in.transpose();
    db += g.rowwise().sum();
    Matrix gin = w.transpose() * g;
    if (l > 0) gin.array() *= (1.0 - in.array().square());
    g = std::move(gin);
  }
  return g;
}

void GaussianPolicy::clamp_log_std() { log_std = log_std.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax); }

double gaussian_log_prob(const Vector& mean, const Vector& log_std, const Vector& action) {
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  double lp = 0.0;
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    const double z = (action[i] - mean[i]) / std::exp(log_std[i]);
    lp += -0.5 * z * z - log_std[i] - half_log_2pi;
  }
  return lp;
}

void gaussian_log_prob_grad(const Vector& mean, const Vector& log_std, const Vector& action,
                            Vector& d_mean, Vector& d_log_std) {
  d_mean.resize(mean.size());
  d_log_std.resize(mean.size());
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    const double sigma = std::exp(log_std[i]);
    const double z = (action[i] - mean[i]) / sigma;
    d_mean[i] = z / sigma;
    d_log_std[i] = z * z - 1.0;
  }
}

double gaussian_entropy(const Vector& log_std) {
  return log_std.sum() + 0.5 * (1.0 + std::log(2.0 * std::numbers::pi)) * static_cast<double>(log_std.size());
}

ActionSample log_prob_and_sample(const GaussianPolicy& policy, const Vector& features, Rng& rng) {
  ActionSample s;
  s.mean = forward(policy.mean_net, features);
  if (!all_finite(s.mean)) throw DivergenceError("policy mean is not finite");
  std::normal_distribution<double> normal(0.0, 1.0);
  s.action.resize(s.mean.size());
  for (Eigen::Index i = 0; i < s.mean.size(); ++i)
    s.action[i] = s.mean[i] + std::exp(policy.log_std[i]) * normal(rng);
  s.log_prob = gaussian_log_prob(s.mean, policy.log_std, s.action);
  return s;
}

AdamState AdamState::for_size(Eigen::Index n, double lr) {
  AdamState s;
  s.m = Vector::Zero(n);
  s.v = Vector::Zero(n);
  s.lr = lr;
  return s;
}

bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

void adam_step(Vector& params, const Vector& grads, AdamState& state) {
  if (grads.size() != params.size()) throw std::invalid_argument("adam_step: gradient size mismatch");
  if (state.m.size() != params.size()) {
    state.m = Vector::Zero(params.size());
    state.v = Vector::Zero(params.size());
  }
  if (!grads.allFinite()) throw DivergenceError("non-finite gradient in adam_step");
  ++state.step;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads.cwiseProduct(grads);
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  params.array() -= state.lr * (state.m.array() / bc1) / ((state.v.array() / bc2).sqrt() + state.eps);
}

namespace {

constexpr char kMagic[8] = {'C', 'U', 'R', 'A', 'N', 'N', '0', '1'};
constexpr char kAdamMagic[8] = {'C', 'U', 'R', 'A', 'D', 'A', 'M', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}
void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}
void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}
std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("checkpoint truncated");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}
double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

void put_vector(std::ostream& out, const Vector& v) {
  put_u64(out, static_cast<std::uint64_t>(v.size()));
  for (double x : v) put_f64(out, x);
}
Vector get_vector(std::istream& in) {
  const auto n = get_u64(in);
  if (n > (1ull << 32)) throw std::runtime_error("checkpoint vector length is implausible");
  Vector v(static_cast<Eigen::Index>(n));
  for (auto& x : v) x = get_f64(in);
  return v;
}

void check_magic(std::istream& in, const char (&magic)[8], const std::filesystem::path& path) {
  char m[8];
  if (!in.read(m, 8) || !std::equal(m, m + 8, magic))
    throw std::runtime_error("not a checkpoint file: " + path.string());
  const auto version = get_u32(in);
  if (version != kVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Mlp& net, const Vector& extra) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
  out.write(kMagic, 8);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(net.layer_sizes().size()));
  for (int s : net.layer_sizes()) put_u32(out, static_cast<std::uint32_t>(s));
  put_vector(out, net.params());
  put_vector(out, extra);
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  check_magic(in, kMagic, path);
  const auto n = get_u32(in);
  if (n < 2 || n > 64) throw std::runtime_error("bad layer manifest in " + path.string());
  std::vector<int> sizes(n);
  for (auto& s : sizes) s = static_cast<int>(get_u32(in));
  Checkpoint ck{Mlp(sizes), {}};
  Vector params = get_vector(in);
  if (params.size() != ck.net.params().size())
    throw std::runtime_error("parameter count does not match layer manifest in " + path.string());
  ck.net.params() = std::move(params);
  ck.extra = get_vector(in);
  return ck;
}

void save_adam(const std::filesystem::path& path, const AdamState& state) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write optimizer state: " + path.string());
  out.write(kAdamMagic, 8);
  put_u32(out, kVersion);
  put_u64(out, static_cast<std::uint64_t>(state.step));
  put_f64(out, state.lr);
  put_f64(out, state.beta1);
  put_f64(out, state.beta2);
  put_f64(out, state.eps);
  put_vector(out, state.m);
  put_vector(out, state.v);
}

AdamState load_adam(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open optimizer state: " + path.string());
  check_magic(in, kAdamMagic, path);
  AdamState s;
  s.step = static_cast<std::int64_t>(get_u64(in));
  s.lr = get_f64(in);
  s.beta1 = get_f64(in);
  s.beta2 = get_f64(in);
  s.eps = get_f64(in);
  s.m = get_vector(in);
  s.v = get_vector(in);
  return s;
}

}  // namespace cura::nn
