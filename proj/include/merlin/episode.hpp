#pragma once

#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "merlin/features.hpp"
#include "merlin/media.hpp"
#include "merlin/netsim.hpp"
#include "merlin/reward.hpp"

namespace merlin {

struct StepContext {
  int64_t t_ms = 0;
  int64_t step_index = 0;
  // Aggregates of the previous tick (zeros at step 0).
  const IntervalStats* last_interval = nullptr;
  double queue_gradient_ms_per_s = 0.0;
};

// A bandwidth estimator driven once per 60 ms tick. Implementations own all
// per-episode state; clone() hands out a fresh instance so episodes can run
// concurrently.
class Estimator {
 public:
  virtual ~Estimator() = default;
  virtual void reset(uint64_t episode_seed) = 0;
  // Returns kbps. Non-finite values abort the episode.
  virtual double estimate_kbps(const Observation& obs, const StepContext& ctx) = 0;
  virtual std::unique_ptr<Estimator> clone() const = 0;
};

struct TrajectoryStep {
  Observation obs;
  float action_norm = 0.0f;
  float action_kbps = 0.0f;
  RewardComponents reward;
};

struct Trajectory {
  std::vector<TrajectoryStep> steps;
  // Labels from a co-run estimator that observes but never acts; empty when
  // no shadow was attached.
  std::vector<float> shadow_kbps;
  // Enough provenance to regenerate the episode exactly.
  ProfileTag profile = ProfileTag::high_bw;
  uint64_t trace_seed = 0;
  int64_t duration_ms = 0;
  uint64_t episode_seed = 0;
  CallKind call_kind = CallKind::audio_video;
  int64_t video_start_ms = 0;
};

struct EpisodeMetrics {
  int64_t steps = 0;
  double recv_rate_kbps = 0.0;  // delivered bytes over the whole episode
  double loss_rate = 0.0;       // lost / (lost + delivered)
  double avg_delay_ms = 0.0;    // mean queueing delay over delivered packets
  double mean_qoe = 0.0;        // mean per-step reward
  double mean_estimate_kbps = 0.0;
  // Set when a shadow estimator ran: squared error in normalized action
  // units, and mean |policy - shadow| / shadow in kbps.
  double mse_vs_expert = 0.0;
  double rel_err_vs_expert = 0.0;
  bool has_expert = false;
};

struct EpisodeOptions {
  FeatureMask mask = full_feature_mask();
  RewardWeights reward_weights;
  Estimator* shadow = nullptr;
};

// Drives one call: featurize, estimate, encode media, push through the link,
// repeat every 60 ms for floor(duration/60) steps. Deterministic in
// (trace, media config, estimator, episode_seed).
std::pair<Trajectory, EpisodeMetrics> run_episode(const NetworkTrace& trace,
                                                  const MediaConfig& media_cfg,
                                                  Estimator& estimator,
                                                  uint64_t episode_seed,
                                                  const EpisodeOptions& opts = {});

}  // namespace merlin
