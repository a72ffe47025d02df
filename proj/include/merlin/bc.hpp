#pragma once

#include <span>
#include <string>
#include <vector>

#include "merlin/demo.hpp"
#include "merlin/policy.hpp"

namespace merlin {

struct BcConfig {
  PolicyShape shape;       // network architecture to fit
  int batch_size = 256;    // trajectories per optimizer step
  int epochs = 1000;
  double lr = 0.001;
  uint64_t seed = 0;
  double holdout_fraction = 0.1;
  FeatureMask mask = full_feature_mask();
  double clip_norm = 5.0;
  // Stop once holdout MSE drops below this (0 disables). The returned curve
  // ends at the stopping epoch.
  double early_stop_mse = 0.0;
  int jobs = 1;
  bool verbose = false;  // per-epoch progress on stderr
};

struct TrainingPoint {
  int epoch = 0;
  double train_mse = 0.0;
  double holdout_mse = 0.0;  // equals train_mse when there is no holdout
};

struct TrainingCurve {
  std::vector<TrainingPoint> points;
};

// CSV: epoch,train_mse,holdout_mse
void save_training_curve(const TrainingCurve& curve, const std::string& path);

struct BcResult {
  PolicyParams params;  // parameters from the best holdout epoch
  TrainingCurve curve;
  double best_holdout_mse = 0.0;
  int best_epoch = 0;
};

// Supervised fit of the policy to expert actions: per-trajectory mean squared
// error in normalized action units, averaged over the batch, Adam, global-norm
// clipping, full-sequence backpropagation. Deterministic in (demos, cfg) for
// any jobs value. Purely offline: no simulator interaction. A non-null init
// resumes from those parameters (shape must match cfg.shape) instead of a
// fresh seeded initialization.
BcResult train_bc(const DemoSet& demos, const BcConfig& cfg,
                  const PolicyParams* init = nullptr);

// Teacher-forced per-trajectory MSE of params on every trajectory in demos.
std::vector<double> evaluate_mse(const PolicyParams& params, const DemoSet& demos,
                                 const FeatureMask& mask = full_feature_mask(),
                                 int jobs = 1);

// Two-column CSV (value,cdf) of the empirical distribution, values ascending.
void save_cdf(std::span<const double> values, const std::string& path);

}  // namespace merlin
