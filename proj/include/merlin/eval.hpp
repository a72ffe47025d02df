#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "merlin/bc.hpp"
#include "merlin/config.hpp"
#include "merlin/demo.hpp"
#include "merlin/stats.hpp"

namespace merlin {

// Estimator factory from a spec string:
//   ukf | tracking_ukf     delay-based expert filter
//   overshoot              constant 2000 kbps
//   undershoot             constant 300 kbps
//   constant:K             constant K kbps
//   policy:PATH            policy parameters loaded from PATH
// Unknown specs throw ConfigError listing the valid forms.
std::unique_ptr<Estimator> make_estimator(const std::string& spec,
                                          const SystemConfig& sys);

struct BenchmarkConfig {
  std::vector<std::string> estimator_specs;
  std::vector<NetworkTrace> traces;  // one episode per trace per estimator
  uint64_t seed = 0;                 // media and episode seeds derive from this
  bool co_run_expert = false;        // shadow UKF fills mse_vs_expert
  SystemConfig sys;
  FeatureMask mask = full_feature_mask();
  int jobs = 1;
};

struct EpisodeRecord {
  std::string estimator;
  int episode = 0;
  ProfileTag profile = ProfileTag::high_bw;
  uint64_t trace_seed = 0;
  EpisodeMetrics metrics;
  bool fault = false;
  std::string fault_message;
};

struct MetricSummary {
  MeanCi recv_rate_kbps, loss_rate, avg_delay_ms, mean_qoe, mean_estimate_kbps;
  double mean_rel_err_vs_expert = 0.0;  // only when the expert was co-run
};

struct EstimatorSummary {
  std::string name;
  int episodes = 0;  // completed, faults excluded
  int faults = 0;
  MetricSummary metrics;
};

// Welch test per metric for one estimator pair. Degenerate cases (both sides
// zero variance) collapse to p = 1 on equal means and p = 0 otherwise, with
// the flag set.
struct PairwiseTest {
  std::string a, b;
  double p_qoe = 1.0, p_delay = 1.0, p_loss = 1.0, p_rate = 1.0;
  bool degenerate = false;
};

struct ComparisonReport {
  std::vector<EpisodeRecord> episodes;
  std::vector<EstimatorSummary> summaries;
  std::vector<PairwiseTest> tests;
};

// Paired closed-loop benchmark: every estimator replays the identical
// (trace, media, seed) tuple list. Estimator faults are recorded and excluded
// from the summaries. Deterministic for any jobs value.
ComparisonReport run_benchmark(const BenchmarkConfig& cfg);

// Writes episodes.csv and summary.json into dir (created if missing).
void save_report(const ComparisonReport& report, const std::string& dir);

// Convenience samples: per-episode metric values of one estimator.
std::vector<double> metric_samples(const ComparisonReport& report,
                                   const std::string& estimator,
                                   const std::string& metric);

struct AblationResult {
  std::string name;  // feature groups joined by '+'
  FeatureMask mask;
  double median_mse = 0.0;
  double mean_mse = 0.0;
  std::vector<double> per_trajectory_mse;  // on the shared holdout
};

// Retrains via behavioral cloning per feature subset on a shared train/holdout
// split and reports teacher-forced holdout MSE distributions.
std::vector<AblationResult> ablate_features(const DemoSet& demos,
                                            const std::vector<FeatureMask>& subsets,
                                            const BcConfig& base);

std::string mask_name(const FeatureMask& mask);

struct ScalingPoint {
  int size = 0;
  double holdout_mse = 0.0;
};

// Trains on nested subsets of the first `size` training trajectories against
// one fixed holdout; sizes must be ascending and positive.
std::vector<ScalingPoint> data_scaling_study(const DemoSet& demos,
                                             std::span<const int> sizes,
                                             const BcConfig& base);

}  // namespace merlin
