#include "merlin/episode.hpp"

#include <algorithm>
#include <cmath>

#include "merlin/action_codec.hpp"
#include "merlin/errors.hpp"

namespace merlin {
namespace {

// Stream ids for deriving per-concern seeds from the episode seed.
constexpr uint64_t kLossStream = 1;
constexpr uint64_t kEstimatorStream = 2;
constexpr uint64_t kShadowStream = 3;

double checked_estimate(Estimator& est, const Observation& obs, const StepContext& ctx,
                        const char* who) {
  const double raw = est.estimate_kbps(obs, ctx);
  if (!std::isfinite(raw)) {
    throw EstimatorFault(std::string(who) + " returned non-finite estimate at step " +
                         std::to_string(ctx.step_index));
  }
  return std::clamp(raw, kMinRateKbps, kMaxRateKbps);
}

}  // namespace

std::pair<Trajectory, EpisodeMetrics> run_episode(const NetworkTrace& trace,
                                                  const MediaConfig& media_cfg,
                                                  Estimator& estimator,
                                                  uint64_t episode_seed,
                                                  const EpisodeOptions& opts) {
  trace.validate();
  const int64_t steps = trace.duration_ms / LinkSimulator::kTickMs;

  MediaConfig cfg = media_cfg;
  cfg.estimate_feedback_delay_ms = trace.prop_delay_ms;
  MediaSource media(cfg);
  LinkSimulator sim(trace, Rng(episode_seed).fork(kLossStream));
  FeatureTracker tracker;
  estimator.reset(derive_seed(episode_seed, kEstimatorStream));
  if (opts.shadow) opts.shadow->reset(derive_seed(episode_seed, kShadowStream));

  Trajectory traj;
  traj.steps.reserve(static_cast<size_t>(steps));
  traj.profile = trace.profile;
  traj.trace_seed = trace.seed;
  traj.duration_ms = trace.duration_ms;
  traj.episode_seed = episode_seed;
  traj.call_kind = cfg.call_kind;
  traj.video_start_ms = cfg.video_start_ms;

  EpisodeMetrics m;
  m.steps = steps;
  double qoe_sum = 0.0, est_sum = 0.0, delay_sum = 0.0, bytes_sum = 0.0;
  double sq_err_sum = 0.0, rel_err_sum = 0.0;
  int64_t delivered_pkts = 0;

  for (int64_t k = 0; k < steps; ++k) {
    const int64_t t = k * LinkSimulator::kTickMs;
    const Observation obs = tracker.observation(opts.mask);
    StepContext ctx;
    ctx.t_ms = t;
    ctx.step_index = k;
    ctx.last_interval = &tracker.last_short();
    ctx.queue_gradient_ms_per_s = tracker.queue_gradient_ms_per_s();

    const double est = checked_estimate(estimator, obs, ctx, "estimator");
    double shadow_est = 0.0;
    if (opts.shadow) {
      shadow_est = checked_estimate(*opts.shadow, obs, ctx, "shadow estimator");
      traj.shadow_kbps.push_back(static_cast<float>(shadow_est));
      const double diff = encode_action(est) - encode_action(shadow_est);
      sq_err_sum += diff * diff;
      rel_err_sum += std::abs(est - shadow_est) / shadow_est;
    }

    const std::vector<Packet> offered = media.encode_step(est, t);
    const StepResult result = sim.step(offered);
    tracker.push_step(result.delivered, result.lost);

    const IntervalStats& tick = tracker.last_short();
    const RewardComponents rc =
        compute_reward(tick.recv_rate_kbps, tick.avg_queue_ms, tick.loss_ratio,
                       opts.reward_weights);

    TrajectoryStep step;
    step.obs = obs;
    step.action_norm = static_cast<float>(encode_action(est));
    step.action_kbps = static_cast<float>(est);
    step.reward = rc;
    traj.steps.push_back(step);

    qoe_sum += rc.total;
    est_sum += est;
    for (const Packet& p : result.delivered) {
      delay_sum += p.queue_time_ms;
      bytes_sum += p.size_bytes;
    }
    delivered_pkts += static_cast<int64_t>(result.delivered.size());
  }

  const int64_t denom = sim.delivered_count() + sim.lost_count();
  m.recv_rate_kbps = bytes_sum * 8.0 / static_cast<double>(trace.duration_ms);
  m.loss_rate = denom > 0 ? static_cast<double>(sim.lost_count()) / static_cast<double>(denom)
                          : 0.0;
  m.avg_delay_ms = delivered_pkts > 0 ? delay_sum / static_cast<double>(delivered_pkts) : 0.0;
  m.mean_qoe = steps > 0 ? qoe_sum / static_cast<double>(steps) : 0.0;
  m.mean_estimate_kbps = steps > 0 ? est_sum / static_cast<double>(steps) : 0.0;
  if (opts.shadow && steps > 0) {
    m.has_expert = true;
    m.mse_vs_expert = sq_err_sum / static_cast<double>(steps);
    m.rel_err_vs_expert = rel_err_sum / static_cast<double>(steps);
  }
  return {std::move(traj), m};
}

}  // namespace merlin
