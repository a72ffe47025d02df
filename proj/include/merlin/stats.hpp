#pragma once

#include <cstdint>
#include <span>

namespace merlin {

struct WelchResult {
  double t = 0.0;    // statistic (sign follows mean(a) - mean(b))
  double dof = 0.0;  // Welch-Satterthwaite degrees of freedom
  double p = 1.0;    // two-sided
};

// Two-sided Welch t-test. Requires at least two samples per side and nonzero
// variance in at least one; degenerate inputs throw ContractError.
WelchResult welch_t_test(std::span<const double> a, std::span<const double> b);

struct MeanCi {
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  int64_t n = 0;
};

// Mean with a Student-t confidence interval (default 95%). A single sample or
// zero variance collapses the interval to the mean.
MeanCi mean_ci(std::span<const double> xs, double confidence = 0.95);

double mean_of(std::span<const double> xs);
double sample_variance(std::span<const double> xs);  // unbiased, n >= 2
double median_of(std::span<const double> xs);        // copies + sorts

}  // namespace merlin
