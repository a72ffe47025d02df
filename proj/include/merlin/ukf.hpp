#pragma once

#include <Eigen/Dense>

#include "merlin/episode.hpp"

namespace merlin {

struct SigmaPoints {
  Eigen::MatrixXd points;  // n x (2n+1), column 0 is the mean
  Eigen::VectorXd wm;      // mean weights, sum to 1
  Eigen::VectorXd wc;      // covariance weights
};

// Standard unscented transform: {mu, mu +- columns of sqrt((n+lambda) Sigma)}
// with lambda = alpha^2 (n+kappa) - n. The matrix root is Cholesky with up to
// three rounds of 1e-9 jitter; still-failing covariances raise NumericalError.
SigmaPoints sigma_points(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                         double alpha, double beta, double kappa);

struct UkfConfig {
  // Wide spread (alpha = 1) on purpose: the measurement model has min/max
  // kinks that a narrow sigma cloud cannot sense.
  double alpha = 1.0;
  double beta = 2.0;
  double kappa = 1.0;
  // Process noise per second of wall time, state [bandwidth kbps, trend kbps/s].
  double q_bw = 4000.0;
  double q_trend = 250000.0;
  // Measurement noise: receive-rate channel (kbps^2) and queue-gradient
  // channel ((ms/s)^2).
  double r_rate = 10000.0;
  double r_gradient = 2500.0;
  double init_bw_kbps = 300.0;
  double init_trend = 0.0;
  double init_var_bw = 250000.0;
  double init_var_trend = 10000.0;
  // Emitted estimates move at most this relative fraction per step, which is
  // what keeps the expert smooth instead of sawtoothing.
  double max_rel_step = 0.25;
  // Ticks at episode start with no measurement update (pipe still filling).
  int warmup_steps = 2;
};

// State [bandwidth, trend]; constant-trend dynamics. The measurement model is
// anchored on the last emitted estimate u (the rate the sender is actually
// pushing): predicted receive rate is min(bw, u), and predicted queue growth
// is the fluid rate 1000*(u - bw)/bw ms/s when overusing, zero otherwise.
// Both channels therefore pull bw toward the true capacity from either side.
class UkfFilter {
 public:
  explicit UkfFilter(const UkfConfig& cfg = {});

  void predict(double dt_ms);
  // Returns the emitted estimate after the measurement update. The gradient
  // measurement is floored at zero: queue drain says nothing about capacity.
  double update(double recv_rate_kbps, double queue_gradient_ms_per_s);

  double emitted_kbps() const { return emitted_; }
  Eigen::Vector2d mean() const { return mean_; }
  Eigen::Matrix2d cov() const { return cov_; }

 private:
  double emit(double proposal);

  UkfConfig cfg_;
  Eigen::Vector2d mean_;
  Eigen::Matrix2d cov_;
  double emitted_;
};

class UkfEstimator final : public Estimator {
 public:
  explicit UkfEstimator(const UkfConfig& cfg = {});

  void reset(uint64_t episode_seed) override;
  double estimate_kbps(const Observation& obs, const StepContext& ctx) override;
  std::unique_ptr<Estimator> clone() const override;

  const UkfFilter& filter() const { return filter_; }

 private:
  UkfConfig cfg_;
  UkfFilter filter_;
};

}  // namespace merlin
