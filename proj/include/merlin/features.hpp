#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <span>
#include <string>

#include "merlin/netsim.hpp"

namespace merlin {

// Aggregate packet statistics over one interval (60 ms short horizon or
// 600 ms long horizon). Rates are in kbps, queue times in ms; media_mass is
// the packet-count fraction of delivered traffic per type, in the order
// video, audio, screenshare, probe. avg_lost_packets is lost packets per
// 60 ms tick so the two horizons stay on one scale.
struct IntervalStats {
  double recv_rate_kbps = 0.0;
  double avg_queue_ms = 0.0;
  double loss_ratio = 0.0;
  double avg_lost_packets = 0.0;
  std::array<double, 4> media_mass = {0.0, 0.0, 0.0, 0.0};
};

// Packets may mix delivered and lost entries (the lost flag decides).
IntervalStats aggregate_interval(std::span<const Packet> packets, double dt_ms);

inline constexpr int kObservationSize = 64;
inline constexpr int kShortWindow = 5;
inline constexpr int kLongWindow = 5;
inline constexpr int kMediaWindow = 3;
inline constexpr int kShortsPerLong = 10;  // 600 ms / 60 ms

struct Observation {
  std::array<float, kObservationSize> values = {};
};

// Per-feature maps into [0,1]. All monotone.
double normalize_recv_rate(double kbps);     // log map over [10, 8000] kbps
double normalize_queue_ms(double ms);        // min(ms/1000, 1)
double normalize_loss_ratio(double ratio);   // identity, clamped
double normalize_avg_lost(double packets);   // min(packets/50, 1)

// Ablation groups. Masking a group zeroes its observation slots.
enum class FeatureGroup { recv_rate, loss_ratio, avg_lost, queue_delay, media_type };
inline constexpr int kFeatureGroupCount = 5;

const char* to_string(FeatureGroup group);
FeatureGroup feature_group_from_string(const std::string& name);  // throws ConfigError

using FeatureMask = std::array<bool, kFeatureGroupCount>;

FeatureMask full_feature_mask();
FeatureMask mask_without(FeatureGroup group);
FeatureGroup slot_group(int slot);
void apply_feature_mask(Observation& obs, const FeatureMask& mask);

// Rolling observation state for one episode. push_step ingests one 60 ms tick
// of simulator output; observation() lays the vector out as four scalar
// metrics (receiving rate, avg queue time, loss ratio, avg lost packets),
// each contributing a short-term window of 5 ticks and a long-term window of
// 5 trailing 600 ms merges, then the four media-mass ratios with windows of 3
// per horizon. Every window is most-recent-first and zero-padded during
// warm-up.
class FeatureTracker {
 public:
  void push_step(std::span<const Packet> delivered, std::span<const Packet> lost);

  Observation observation() const { return observation(full_feature_mask()); }
  Observation observation(const FeatureMask& mask) const;

  // Stats for the most recent tick (zeros before the first push).
  const IntervalStats& last_short() const { return last_short_; }
  // Change of avg queue time between the two most recent ticks, per second.
  double queue_gradient_ms_per_s() const;
  int64_t steps_seen() const { return steps_; }

 private:
  struct Counts {
    double delivered_bytes = 0.0;
    int64_t delivered = 0;
    int64_t lost = 0;
    double queue_ms_sum = 0.0;
    std::array<int64_t, 4> per_media = {0, 0, 0, 0};

    void add(const Counts& other);
  };
  static IntervalStats finalize(const Counts& c, double dt_ms);
  IntervalStats long_term(int back) const;  // back = 0 is the newest 600 ms window

  std::deque<Counts> shorts_;  // newest at the back, capped at 50 ticks
  IntervalStats last_short_;
  double prev_avg_queue_ms_ = 0.0;
  int64_t steps_ = 0;
};

}  // namespace merlin
