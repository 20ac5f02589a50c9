#pragma once

#include "cura/nn.hpp"

namespace cura::dce {

using nn::Vector;

inline constexpr int kDefaultQuantiles = 50;
inline constexpr double kDefaultCollisionDiscount = 0.9;

// N quantile estimates of the discounted collision count. Levels are
// tau_i = (i - 0.5) / N; values are never sorted.
struct QuantileSet {
  Vector values;

  int size() const { return static_cast<int>(values.size()); }
  double level(int i) const { return (i + 0.5) / static_cast<double>(values.size()); }
};

struct CollisionDiscount {
  double gamma_c = kDefaultCollisionDiscount;

  // Largest attainable discounted collision count, 1 / (1 - gamma_c).
  double upper_bound() const { return 1.0 / (1.0 - gamma_c); }
};

struct RiskUncertainty {
  double risk = 0.0;
  double uncertainty = 0.0;
};

QuantileSet predict_quantiles(const nn::Mlp& dce_net, const Vector& observation);

// Mean and population variance (divide by N) of the quantile values.
RiskUncertainty risk_and_uncertainty(const QuantileSet& qs);
RiskUncertainty risk_and_uncertainty(const Eigen::Ref<const Vector>& values);

// target_j = c + gamma_c * next_j (next := 0 when terminal), clamped to [0, 1/(1-gamma_c)].
QuantileSet bellman_targets(int collision, bool terminal, const QuantileSet& next, CollisionDiscount discount);
void bellman_targets_into(int collision, bool terminal, const Eigen::Ref<const Vector>& next,
                          CollisionDiscount discount, Eigen::Ref<Vector> out);

struct LossAndGrad {
  double loss = 0.0;
  Vector grad;  // w.r.t. the predicted values
};

// Energy distance between the uniform atom sets `pred` and `target`:
// 2 E|z_i - T_j| - E|T_i - T_j| - E|z_i - z_j| over all N^2 pairs.
// The subgradient of |x| at 0 is taken as 0.
LossAndGrad energy_distance_loss(const QuantileSet& pred, const QuantileSet& target);
double energy_distance_loss_into(const Eigen::Ref<const Vector>& pred, const Eigen::Ref<const Vector>& target,
                                 Eigen::Ref<Vector> grad);

}  // namespace cura::dce
