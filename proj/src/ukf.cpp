#include "merlin/ukf.hpp"

#include <algorithm>
#include <cmath>

#include "merlin/action_codec.hpp"
#include "merlin/errors.hpp"

namespace merlin {
namespace {

Eigen::MatrixXd cholesky_with_jitter(Eigen::MatrixXd m) {
  double jitter = 1e-9;
  for (int attempt = 0; attempt < 4; ++attempt) {
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    m += jitter * Eigen::MatrixXd::Identity(m.rows(), m.cols());
    jitter *= 10.0;
  }
  throw NumericalError("covariance not positive semidefinite after jitter");
}

}  // namespace

SigmaPoints sigma_points(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                         double alpha, double beta, double kappa) {
  const int n = static_cast<int>(mean.size());
  if (cov.rows() != n || cov.cols() != n) {
    throw ContractError("sigma_points: covariance shape does not match mean");
  }
  const double lambda = alpha * alpha * (n + kappa) - n;
  const double scale = static_cast<double>(n) + lambda;
  if (scale <= 0.0) throw ConfigError("sigma_points: n + lambda must be positive");

  SigmaPoints sp;
  sp.points.resize(n, 2 * n + 1);
  sp.wm.resize(2 * n + 1);
  sp.wc.resize(2 * n + 1);
  const Eigen::MatrixXd root = cholesky_with_jitter(scale * cov);
  sp.points.col(0) = mean;
  for (int i = 0; i < n; ++i) {
    sp.points.col(1 + i) = mean + root.col(i);
    sp.points.col(1 + n + i) = mean - root.col(i);
  }
  sp.wm(0) = lambda / scale;
  sp.wc(0) = lambda / scale + (1.0 - alpha * alpha + beta);
  for (int i = 1; i < 2 * n + 1; ++i) {
    sp.wm(i) = 0.5 / scale;
    sp.wc(i) = 0.5 / scale;
  }
  return sp;
}

UkfFilter::UkfFilter(const UkfConfig& cfg) : cfg_(cfg) {
  mean_ << cfg_.init_bw_kbps, cfg_.init_trend;
  cov_ << cfg_.init_var_bw, 0.0, 0.0, cfg_.init_var_trend;
  emitted_ = std::clamp(cfg_.init_bw_kbps, kMinRateKbps, kMaxRateKbps);
}

void UkfFilter::predict(double dt_ms) {
  const double dt_s = dt_ms / 1000.0;
  const SigmaPoints sp = sigma_points(mean_, cov_, cfg_.alpha, cfg_.beta, cfg_.kappa);
  Eigen::MatrixXd prop(2, sp.points.cols());
  for (int i = 0; i < sp.points.cols(); ++i) {
    prop(0, i) = sp.points(0, i) + sp.points(1, i) * dt_s;
    prop(1, i) = sp.points(1, i);
  }
  mean_ = prop * sp.wm;
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (int i = 0; i < prop.cols(); ++i) {
    const Eigen::Vector2d d = prop.col(i) - Eigen::Vector2d(mean_);
    cov += sp.wc(i) * d * d.transpose();
  }
  cov(0, 0) += cfg_.q_bw * dt_s;
  cov(1, 1) += cfg_.q_trend * dt_s;
  cov_ = 0.5 * (cov + cov.transpose());
  mean_(0) = std::clamp(mean_(0), kMinRateKbps, kMaxRateKbps);
}

double UkfFilter::update(double recv_rate_kbps, double queue_gradient_ms_per_s) {
  if (!std::isfinite(recv_rate_kbps) || !std::isfinite(queue_gradient_ms_per_s)) {
    throw NumericalError("ukf update: non-finite measurement");
  }
  const double u = emitted_;
  const SigmaPoints sp = sigma_points(mean_, cov_, cfg_.alpha, cfg_.beta, cfg_.kappa);
  Eigen::MatrixXd z_sigma(2, sp.points.cols());
  for (int i = 0; i < sp.points.cols(); ++i) {
    const double bw = sp.points(0, i);
    z_sigma(0, i) = std::min(bw, u);
    z_sigma(1, i) = 1000.0 * std::max(u - bw, 0.0) / std::max(bw, 10.0);
  }
  const Eigen::Vector2d z_pred = z_sigma * sp.wm;
  Eigen::Matrix2d s = Eigen::Matrix2d::Zero();
  Eigen::Matrix2d cross = Eigen::Matrix2d::Zero();
  for (int i = 0; i < z_sigma.cols(); ++i) {
    const Eigen::Vector2d dz = z_sigma.col(i) - z_pred;
    const Eigen::Vector2d dx = sp.points.col(i) - Eigen::Vector2d(mean_);
    s += sp.wc(i) * dz * dz.transpose();
    cross += sp.wc(i) * dx * dz.transpose();
  }
  s(0, 0) += cfg_.r_rate;
  s(1, 1) += cfg_.r_gradient;

  const Eigen::Vector2d z(recv_rate_kbps, std::max(queue_gradient_ms_per_s, 0.0));
  const Eigen::Matrix2d gain = cross * s.inverse();
  mean_ += gain * (z - z_pred);
  Eigen::Matrix2d cov = cov_ - gain * s * gain.transpose();
  cov_ = 0.5 * (cov + cov.transpose());
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov_);
  if (eig.eigenvalues().minCoeff() < -1e-9) {
    throw NumericalError("ukf update left covariance indefinite");
  }
  mean_(0) = std::clamp(mean_(0), kMinRateKbps, kMaxRateKbps);
  return emit(mean_(0));
}

double UkfFilter::emit(double proposal) {
  const double lo = emitted_ * (1.0 - cfg_.max_rel_step);
  const double hi = emitted_ * (1.0 + cfg_.max_rel_step);
  emitted_ = std::clamp(std::clamp(proposal, lo, hi), kMinRateKbps, kMaxRateKbps);
  return emitted_;
}

UkfEstimator::UkfEstimator(const UkfConfig& cfg) : cfg_(cfg), filter_(cfg) {}

void UkfEstimator::reset(uint64_t) { filter_ = UkfFilter(cfg_); }

double UkfEstimator::estimate_kbps(const Observation&, const StepContext& ctx) {
  filter_.predict(LinkSimulator::kTickMs);
  if (ctx.step_index < cfg_.warmup_steps || ctx.last_interval == nullptr) {
    return filter_.emitted_kbps();
  }
  return filter_.update(ctx.last_interval->recv_rate_kbps, ctx.queue_gradient_ms_per_s);
}

std::unique_ptr<Estimator> UkfEstimator::clone() const {
  return std::make_unique<UkfEstimator>(cfg_);
}

}  // namespace merlin
