#include "merlin/stats.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "merlin/errors.hpp"

namespace merlin {

double mean_of(std::span<const double> xs) {
  if (xs.empty()) throw ContractError("mean of empty sample");
  double acc = 0.0;
  for (double x : xs) acc += x;
  return acc / static_cast<double>(xs.size());
}

double sample_variance(std::span<const double> xs) {
  if (xs.size() < 2) throw ContractError("variance needs at least two samples");
  const double m = mean_of(xs);
  double acc = 0.0;
  for (double x : xs) acc += (x - m) * (x - m);
  return acc / static_cast<double>(xs.size() - 1);
}

double median_of(std::span<const double> xs) {
  if (xs.empty()) throw ContractError("median of empty sample");
  std::vector<double> v(xs.begin(), xs.end());
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) {
    throw ContractError("welch test needs at least two samples per side");
  }
  for (double x : a) {
    if (!std::isfinite(x)) throw ContractError("welch test sample not finite");
  }
  for (double x : b) {
    if (!std::isfinite(x)) throw ContractError("welch test sample not finite");
  }
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double va = sample_variance(a) / na;
  const double vb = sample_variance(b) / nb;
  if (va + vb == 0.0) {
    throw ContractError("welch test is undefined for two zero-variance samples");
  }
  WelchResult r;
  r.t = (mean_of(a) - mean_of(b)) / std::sqrt(va + vb);
  r.dof = (va + vb) * (va + vb) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
  const boost::math::students_t dist(r.dof);
  r.p = 2.0 * boost::math::cdf(dist, -std::abs(r.t));
  return r;
}

MeanCi mean_ci(std::span<const double> xs, double confidence) {
  if (xs.empty()) throw ContractError("confidence interval of empty sample");
  if (confidence <= 0.0 || confidence >= 1.0) {
    throw ContractError("confidence must lie in (0,1)");
  }
  MeanCi r;
  r.n = static_cast<int64_t>(xs.size());
  r.mean = mean_of(xs);
  r.lo = r.hi = r.mean;
  if (xs.size() < 2) return r;
  const double var = sample_variance(xs);
  if (var == 0.0) return r;
  const boost::math::students_t dist(static_cast<double>(xs.size() - 1));
  const double tcrit = boost::math::quantile(dist, 0.5 + confidence / 2.0);
  const double half = tcrit * std::sqrt(var / static_cast<double>(xs.size()));
  r.lo = r.mean - half;
  r.hi = r.mean + half;
  return r;
}

}  // namespace merlin
