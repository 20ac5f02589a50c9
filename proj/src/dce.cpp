#include "cura/dce.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>
#include <stdexcept>

namespace cura::dce {

QuantileSet predict_quantiles(const nn::Mlp& dce_net, const Vector& observation) {
  QuantileSet qs{nn::forward(dce_net, observation)};
  if (!qs.values.allFinite()) throw nn::DivergenceError("DCE produced non-finite quantiles");
  return qs;
}

RiskUncertainty risk_and_uncertainty(const Eigen::Ref<const Vector>& values) {
  if (values.size() == 0) throw std::invalid_argument("empty quantile set");
  const double mean = values.mean();
  const double var = (values.array() - mean).square().mean();
  return {mean, var};
}

RiskUncertainty risk_and_uncertainty(const QuantileSet& qs) { return risk_and_uncertainty(qs.values); }

void bellman_targets_into(int collision, bool terminal, const Eigen::Ref<const Vector>& next,
                          CollisionDiscount discount, Eigen::Ref<Vector> out) {
  const double hi = discount.upper_bound();
  const double c = static_cast<double>(collision);
  for (Eigen::Index j = 0; j < next.size(); ++j) {
    const double bootstrap = terminal ? 0.0 : next[j];
    out[j] = std::clamp(c + discount.gamma_c * bootstrap, 0.0, hi);
  }
}

QuantileSet bellman_targets(int collision, bool terminal, const QuantileSet& next, CollisionDiscount discount) {
  QuantileSet out{Vector(next.values.size())};
  bellman_targets_into(collision, terminal, next.values, discount, out.values);
  return out;
}

namespace {

double sign(double x) { return (x > 0.0) - (x < 0.0); }

}  // namespace

double energy_distance_loss_into(const Eigen::Ref<const Vector>& pred, const Eigen::Ref<const Vector>& target,
                                 Eigen::Ref<Vector> grad) {
  const auto n = pred.size();
  if (n == 0 || target.size() != n) throw std::invalid_argument("energy distance needs equal, non-empty sets");
  // Pairs are summed in sorted order so identical multisets give exactly zero.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return pred[a] < pred[b]; });
  Vector p(n), t = target;
  for (Eigen::Index i = 0; i < n; ++i) p[i] = pred[order[i]];
  std::sort(t.begin(), t.end());

  const double inv = 1.0 / static_cast<double>(n * n);
  double cross = 0.0, self_pred = 0.0, self_target = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double g = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      const double dt = p[i] - t[j];
      const double dp = p[i] - p[j];
      cross += std::abs(dt);
      self_pred += std::abs(dp);
      self_target += std::abs(t[i] - t[j]);
      g += 2.0 * sign(dt) - 2.0 * sign(dp);
    }
    grad[order[i]] = g * inv;
  }
  return (2.0 * cross - self_target - self_pred) * inv;
}

LossAndGrad energy_distance_loss(const QuantileSet& pred, const QuantileSet& target) {
  LossAndGrad out{0.0, Vector(pred.values.size())};
  out.loss = energy_distance_loss_into(pred.values, target.values, out.grad);
  return out;
}

}  // namespace cura::dce
