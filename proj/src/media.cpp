#include "merlin/media.hpp"

#include <algorithm>
#include <cmath>

#include "merlin/action_codec.hpp"
#include "merlin/errors.hpp"

namespace merlin {
namespace {

constexpr double kShareFraction = 0.3;  // of the non-audio budget
constexpr int kProbeBurst = 3;
constexpr int kProbeBytes = 300;

}  // namespace

const char* to_string(CallKind kind) {
  switch (kind) {
    case CallKind::audio_only: return "audio_only";
    case CallKind::audio_video: return "audio_video";
    case CallKind::audio_video_screenshare: return "audio_video_screenshare";
  }
  throw ConfigError("invalid call kind value");
}

CallKind call_kind_from_string(const std::string& name) {
  if (name == "audio_only") return CallKind::audio_only;
  if (name == "audio_video") return CallKind::audio_video;
  if (name == "audio_video_screenshare") return CallKind::audio_video_screenshare;
  throw DataError("unknown call kind: " + name);
}

MediaConfig sample_call_config(uint64_t seed) {
  Rng rng = Rng(seed).fork(2000);
  MediaConfig cfg;
  const double u = rng.uniform();
  if (u < 0.2) {
    cfg.call_kind = CallKind::audio_only;
  } else if (u < 0.9) {
    cfg.call_kind = CallKind::audio_video;
  } else {
    cfg.call_kind = CallKind::audio_video_screenshare;
  }
  cfg.video_start_ms = rng.uniform_int(0, 10000);
  return cfg;
}

MediaSource::MediaSource(const MediaConfig& cfg) : cfg_(cfg) {
  if (cfg_.packet_mtu_bytes <= 0) throw ConfigError("packet_mtu_bytes must be positive");
  if (cfg_.audio_rate_kbps < 0.0) throw ConfigError("audio_rate_kbps must be >= 0");
  if (cfg_.probe_interval_ms < kTickMs) throw ConfigError("probe_interval_ms below one tick");
}

double MediaSource::delayed_estimate(double t_ms) const {
  // Latest estimate old enough to have reached the sender; before any has,
  // fall back to the earliest one recorded.
  const double cutoff = t_ms - cfg_.estimate_feedback_delay_ms;
  double value = estimate_log_.front().second;
  for (const auto& [ts, est] : estimate_log_) {
    if (ts <= cutoff) value = est;
    else break;
  }
  return value;
}

std::vector<Packet> MediaSource::encode_step(double estimate_kbps, int64_t t_ms) {
  const double est = std::clamp(estimate_kbps, kMinRateKbps, kMaxRateKbps);
  estimate_log_.emplace_back(static_cast<double>(t_ms), est);
  // Only estimates younger than the feedback delay matter; keep a short tail.
  while (estimate_log_.size() > 2 &&
         estimate_log_[1].first <= t_ms - cfg_.estimate_feedback_delay_ms) {
    estimate_log_.pop_front();
  }
  const double target = delayed_estimate(static_cast<double>(t_ms));

  const double audio_rate = std::min(cfg_.audio_rate_kbps, target);
  const bool video_active =
      cfg_.call_kind != CallKind::audio_only && t_ms >= cfg_.video_start_ms;
  const double media_rate = video_active ? std::max(target - audio_rate, 0.0) : 0.0;

  audio_acc_bytes_ += audio_rate * kTickMs / 8.0;
  if (video_active) media_acc_bytes_ += media_rate * kTickMs / 8.0;

  struct Pending {
    MediaType media;
    int bytes;
  };
  std::vector<Pending> pending;

  while (audio_acc_bytes_ >= 1.0) {
    const int bytes = std::min(cfg_.packet_mtu_bytes,
                               static_cast<int>(std::floor(audio_acc_bytes_)));
    audio_acc_bytes_ -= bytes;
    pending.push_back({MediaType::audio, bytes});
  }

  const double share_fraction =
      cfg_.call_kind == CallKind::audio_video_screenshare ? kShareFraction : 0.0;
  while (media_acc_bytes_ >= cfg_.packet_mtu_bytes) {
    media_acc_bytes_ -= cfg_.packet_mtu_bytes;
    share_credit_ += share_fraction;
    MediaType media = MediaType::video;
    if (share_credit_ >= 1.0) {
      share_credit_ -= 1.0;
      media = MediaType::screenshare;
    }
    pending.push_back({media, cfg_.packet_mtu_bytes});
  }

  if (t_ms >= next_probe_ms_) {
    next_probe_ms_ += cfg_.probe_interval_ms;
    for (int i = 0; i < kProbeBurst; ++i) {
      pending.push_back({MediaType::probe, kProbeBytes});
      // Probe bytes ride the media budget so the offered rate stays at the
      // target; with no video there is nothing to carve from and the burst is
      // small enough to fit the one-MTU allowance.
      if (video_active) media_acc_bytes_ -= kProbeBytes;
    }
  }

  std::vector<Packet> out;
  out.reserve(pending.size());
  const double spacing = static_cast<double>(kTickMs) / std::max<size_t>(pending.size(), 1);
  for (size_t i = 0; i < pending.size(); ++i) {
    Packet p;
    p.seq = seq_++;
    p.size_bytes = pending[i].bytes;
    p.media = pending[i].media;
    p.send_ts_ms = static_cast<double>(t_ms) + (static_cast<double>(i) + 0.5) * spacing;
    out.push_back(p);
  }
  return out;
}

}  // namespace merlin
