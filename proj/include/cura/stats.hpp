#pragma once

#include <span>
#include <vector>

namespace cura::stats {

double mean(std::span<const double> x);

// Least-squares slope of y against x = 0, 1, ..., n-1. Needs n >= 2.
double linear_slope(std::span<const double> y);

enum class Alternative { TwoSided, Less, Greater };

struct WilcoxonResult {
  int n = 0;             // pairs with a non-zero difference
  double w_plus = 0.0;   // rank sum of positive differences a - b
  double z = 0.0;
  double p_value = 1.0;
};

// Paired signed-rank test on a - b with the normal approximation (average
// ranks for ties, tie-corrected variance, continuity correction). `Less`
// tests whether a tends to be smaller than b.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b,
                                    Alternative alternative = Alternative::TwoSided);

// sup |F_a - F_b| between the empirical CDFs of two samples.
double ks_distance(std::vector<double> a, std::vector<double> b);

double normal_cdf(double z);

}  // namespace cura::stats
