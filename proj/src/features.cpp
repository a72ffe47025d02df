#include "merlin/features.hpp"

#include <algorithm>
#include <cmath>

#include "merlin/action_codec.hpp"
#include "merlin/errors.hpp"

namespace merlin {
namespace {

constexpr int kMaxShorts = kLongWindow * kShortsPerLong;

void count_packet(const Packet& p, double& delivered_bytes, int64_t& delivered, int64_t& lost,
                  double& queue_ms_sum, std::array<int64_t, 4>& per_media) {
  if (p.lost) {
    ++lost;
    return;
  }
  ++delivered;
  delivered_bytes += p.size_bytes;
  queue_ms_sum += p.queue_time_ms;
  ++per_media[static_cast<int>(p.media)];
}

}  // namespace

IntervalStats aggregate_interval(std::span<const Packet> packets, double dt_ms) {
  if (dt_ms <= 0.0) throw ContractError("aggregate_interval needs dt_ms > 0");
  double delivered_bytes = 0.0, queue_ms_sum = 0.0;
  int64_t delivered = 0, lost = 0;
  std::array<int64_t, 4> per_media = {0, 0, 0, 0};
  for (const Packet& p : packets) {
    count_packet(p, delivered_bytes, delivered, lost, queue_ms_sum, per_media);
  }
  IntervalStats s;
  s.recv_rate_kbps = delivered_bytes * 8.0 / dt_ms;
  s.avg_queue_ms = delivered > 0 ? queue_ms_sum / static_cast<double>(delivered) : 0.0;
  s.loss_ratio =
      delivered + lost > 0 ? static_cast<double>(lost) / static_cast<double>(delivered + lost)
                           : 0.0;
  s.avg_lost_packets = static_cast<double>(lost) / (dt_ms / 60.0);
  if (delivered > 0) {
    for (int i = 0; i < 4; ++i) {
      s.media_mass[i] = static_cast<double>(per_media[i]) / static_cast<double>(delivered);
    }
  }
  return s;
}

double normalize_recv_rate(double kbps) { return encode_action(std::max(kbps, 0.0)); }

double normalize_queue_ms(double ms) { return std::clamp(ms / 1000.0, 0.0, 1.0); }

double normalize_loss_ratio(double ratio) { return std::clamp(ratio, 0.0, 1.0); }

double normalize_avg_lost(double packets) { return std::clamp(packets / 50.0, 0.0, 1.0); }

const char* to_string(FeatureGroup group) {
  switch (group) {
    case FeatureGroup::recv_rate: return "recv_rate";
    case FeatureGroup::loss_ratio: return "loss_ratio";
    case FeatureGroup::avg_lost: return "avg_lost";
    case FeatureGroup::queue_delay: return "queue_delay";
    case FeatureGroup::media_type: return "media_type";
  }
  throw ConfigError("invalid feature group value");
}

FeatureGroup feature_group_from_string(const std::string& name) {
  if (name == "recv_rate") return FeatureGroup::recv_rate;
  if (name == "loss_ratio") return FeatureGroup::loss_ratio;
  if (name == "avg_lost") return FeatureGroup::avg_lost;
  if (name == "queue_delay") return FeatureGroup::queue_delay;
  if (name == "media_type") return FeatureGroup::media_type;
  throw ConfigError("unknown feature group: " + name);
}

FeatureMask full_feature_mask() {
  FeatureMask mask;
  mask.fill(true);
  return mask;
}

FeatureMask mask_without(FeatureGroup group) {
  FeatureMask mask = full_feature_mask();
  mask[static_cast<int>(group)] = false;
  return mask;
}

FeatureGroup slot_group(int slot) {
  if (slot < 0 || slot >= kObservationSize) throw ContractError("observation slot out of range");
  constexpr int kScalarSpan = kShortWindow + kLongWindow;  // 10 slots per scalar metric
  if (slot < 4 * kScalarSpan) {
    switch (slot / kScalarSpan) {
      case 0: return FeatureGroup::recv_rate;
      case 1: return FeatureGroup::queue_delay;
      case 2: return FeatureGroup::loss_ratio;
      default: return FeatureGroup::avg_lost;
    }
  }
  return FeatureGroup::media_type;
}

void apply_feature_mask(Observation& obs, const FeatureMask& mask) {
  for (int i = 0; i < kObservationSize; ++i) {
    if (!mask[static_cast<int>(slot_group(i))]) obs.values[i] = 0.0f;
  }
}

void FeatureTracker::Counts::add(const Counts& other) {
  delivered_bytes += other.delivered_bytes;
  delivered += other.delivered;
  lost += other.lost;
  queue_ms_sum += other.queue_ms_sum;
  for (int i = 0; i < 4; ++i) per_media[i] += other.per_media[i];
}

IntervalStats FeatureTracker::finalize(const Counts& c, double dt_ms) {
  IntervalStats s;
  s.recv_rate_kbps = c.delivered_bytes * 8.0 / dt_ms;
  s.avg_queue_ms = c.delivered > 0 ? c.queue_ms_sum / static_cast<double>(c.delivered) : 0.0;
  s.loss_ratio = c.delivered + c.lost > 0
                     ? static_cast<double>(c.lost) / static_cast<double>(c.delivered + c.lost)
                     : 0.0;
  s.avg_lost_packets = static_cast<double>(c.lost) / (dt_ms / 60.0);
  if (c.delivered > 0) {
    for (int i = 0; i < 4; ++i) {
      s.media_mass[i] =
          static_cast<double>(c.per_media[i]) / static_cast<double>(c.delivered);
    }
  }
  return s;
}

void FeatureTracker::push_step(std::span<const Packet> delivered,
                               std::span<const Packet> lost) {
  Counts c;
  for (const Packet& p : delivered) {
    count_packet(p, c.delivered_bytes, c.delivered, c.lost, c.queue_ms_sum, c.per_media);
  }
  for (const Packet& p : lost) {
    if (!p.lost) throw ContractError("packet in lost list not marked lost");
    ++c.lost;
  }
  prev_avg_queue_ms_ = last_short_.avg_queue_ms;
  shorts_.push_back(c);
  if (shorts_.size() > kMaxShorts) shorts_.pop_front();
  last_short_ = finalize(c, 60.0);
  ++steps_;
}

double FeatureTracker::queue_gradient_ms_per_s() const {
  if (steps_ < 2) return 0.0;
  return (last_short_.avg_queue_ms - prev_avg_queue_ms_) / 0.06;
}

IntervalStats FeatureTracker::long_term(int back) const {
  Counts merged;
  const int n = static_cast<int>(shorts_.size());
  // Window `back` covers ticks [n - 10(back+1), n - 10 back); missing ticks
  // before episode start contribute zeros.
  const int hi = n - back * kShortsPerLong;
  const int lo = hi - kShortsPerLong;
  for (int i = std::max(lo, 0); i < hi; ++i) {
    if (i >= 0 && i < n) merged.add(shorts_[static_cast<size_t>(i)]);
  }
  return finalize(merged, 60.0 * kShortsPerLong);
}

Observation FeatureTracker::observation(const FeatureMask& mask) const {
  Observation obs;
  const int n = static_cast<int>(shorts_.size());
  auto short_stats = [&](int back) -> IntervalStats {
    const int idx = n - 1 - back;
    if (idx < 0) return IntervalStats{};
    return finalize(shorts_[static_cast<size_t>(idx)], 60.0);
  };
  std::array<IntervalStats, kShortWindow> st;
  for (int i = 0; i < kShortWindow; ++i) st[i] = short_stats(i);
  std::array<IntervalStats, kLongWindow> lt;
  for (int i = 0; i < kLongWindow; ++i) lt[i] = long_term(i);

  int slot = 0;
  auto emit_scalar = [&](auto metric) {
    for (int i = 0; i < kShortWindow; ++i) obs.values[slot++] = static_cast<float>(metric(st[i]));
    for (int i = 0; i < kLongWindow; ++i) obs.values[slot++] = static_cast<float>(metric(lt[i]));
  };
  emit_scalar([](const IntervalStats& s) { return normalize_recv_rate(s.recv_rate_kbps); });
  emit_scalar([](const IntervalStats& s) { return normalize_queue_ms(s.avg_queue_ms); });
  emit_scalar([](const IntervalStats& s) { return normalize_loss_ratio(s.loss_ratio); });
  emit_scalar([](const IntervalStats& s) { return normalize_avg_lost(s.avg_lost_packets); });
  for (int media = 0; media < 4; ++media) {
    for (int i = 0; i < kMediaWindow; ++i) {
      obs.values[slot++] = static_cast<float>(st[i].media_mass[static_cast<size_t>(media)]);
    }
    for (int i = 0; i < kMediaWindow; ++i) {
      obs.values[slot++] = static_cast<float>(lt[i].media_mass[static_cast<size_t>(media)]);
    }
  }
  if (slot != kObservationSize) throw ContractError("observation layout does not fill 64 slots");
  apply_feature_mask(obs, mask);
  return obs;
}

}  // namespace merlin
