#pragma once

#include <span>
#include <utility>
#include <vector>

namespace palette {

// Linear-interpolated quantile of sorted data, q in [0, 1]. 0 for empty input.
double quantile_sorted(std::span<const double> sorted, double q);
double quantile(std::vector<double> values, double q);
double mean(std::span<const double> values);

// Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b| over the pooled
// support. Inputs need not be sorted.
double ks_statistic(std::vector<double> a, std::vector<double> b);

// Empirical CDF as (value, cumulative fraction) steps.
std::vector<std::pair<double, double>> ecdf(std::vector<double> values);

}  // namespace palette
