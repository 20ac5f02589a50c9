#include "cura/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace cura::stats {

double mean(std::span<const double> x) {
  if (x.empty()) throw std::invalid_argument("mean of an empty sample");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double linear_slope(std::span<const double> y) {
  const auto n = y.size();
  if (n < 2) throw std::invalid_argument("slope needs at least two points");
  const double xm = (static_cast<double>(n) - 1.0) / 2.0;
  const double ym = mean(y);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = static_cast<double>(i) - xm;
    sxy += dx * (y[i] - ym);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b, Alternative alternative) {
  if (a.size() != b.size()) throw std::invalid_argument("paired samples differ in length");
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) d.push_back(a[i] - b[i]);
  }
  WilcoxonResult r;
  r.n = static_cast<int>(d.size());
  if (r.n == 0) return r;

  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto i, auto j) { return std::abs(d[i]) < std::abs(d[j]); });
  std::vector<double> rank(d.size());
  double tie_term = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    const double avg = (static_cast<double>(i + j) + 2.0) / 2.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i] > 0) r.w_plus += rank[i];
  }
  const double n = r.n;
  const double mu = n * (n + 1.0) / 4.0;
  const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
  if (var <= 0.0) return r;
  const double sd = std::sqrt(var);
  const double diff = r.w_plus - mu;
  switch (alternative) {
    case Alternative::Less:
      r.z = (diff + 0.5) / sd;
      r.p_value = normal_cdf(r.z);
      break;
    case Alternative::Greater:
      r.z = (diff - 0.5) / sd;
      r.p_value = 1.0 - normal_cdf(r.z);
      break;
    case Alternative::TwoSided:
      r.z = (diff - std::copysign(std::min(0.5, std::abs(diff)), diff)) / sd;
      r.p_value = std::min(1.0, 2.0 * (1.0 - normal_cdf(std::abs(r.z))));
      break;
  }
  return r;
}

double ks_distance(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("KS distance of an empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double best = 0.0;
  while (i < a.size() || j < b.size()) {
    const double x = (j == b.size() || (i < a.size() && a[i] <= b[j])) ? a[i] : b[j];
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    best = std::max(best, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return best;
}

}  // namespace cura::stats
