#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "merlin/netsim.hpp"

namespace merlin {

enum class CallKind { audio_only, audio_video, audio_video_screenshare };

const char* to_string(CallKind kind);
CallKind call_kind_from_string(const std::string& name);  // throws DataError

struct MediaConfig {
  CallKind call_kind = CallKind::audio_video;
  int64_t video_start_ms = 0;
  double audio_rate_kbps = 24.0;
  int packet_mtu_bytes = 1200;
  int64_t probe_interval_ms = 2000;
  // Estimates reach the sender this late; the episode driver overwrites it
  // with the trace propagation delay.
  double estimate_feedback_delay_ms = 50.0;
};

// Deterministic in seed. Call kinds mix 20% audio-only, 70% audio+video,
// 10% audio+video+screenshare; video_start_ms uniform in [0, 10000].
MediaConfig sample_call_config(uint64_t seed);

// Turns a bandwidth estimate into one 60 ms tick of packets. Audio is a
// constant small stream; video and screenshare split the remaining budget via
// byte accumulators that carry fractional-MTU residue across ticks, so the
// offered rate tracks the delayed estimate without ever exceeding it by more
// than one MTU per tick. Probe bursts are carved out of the media budget.
class MediaSource {
 public:
  static constexpr int kTickMs = 60;

  explicit MediaSource(const MediaConfig& cfg);

  std::vector<Packet> encode_step(double estimate_kbps, int64_t t_ms);

  const MediaConfig& config() const { return cfg_; }

 private:
  double delayed_estimate(double t_ms) const;

  MediaConfig cfg_;
  int64_t seq_ = 0;
  double audio_acc_bytes_ = 0.0;
  double media_acc_bytes_ = 0.0;  // video + screenshare, shared budget
  double share_credit_ = 0.0;     // fraction of media packets owed to screenshare
  int64_t next_probe_ms_ = 0;
  std::deque<std::pair<double, double>> estimate_log_;  // (t_ms, kbps)
};

}  // namespace merlin
