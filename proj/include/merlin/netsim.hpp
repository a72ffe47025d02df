#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <vector>

#include "merlin/rng.hpp"

namespace merlin {

enum class ProfileTag { low_bw, high_bw, fluctuating_bw, burst_loss, lte };

const char* to_string(ProfileTag tag);
ProfileTag profile_from_string(const std::string& name);  // throws ConfigError

enum class LossKind { none, iid, gilbert_elliott };

const char* to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& name);  // throws DataError

struct LossModel {
  LossKind kind = LossKind::none;
  double iid_rate = 0.0;
  // Two-state burst chain: good passes everything, bad drops loss_in_bad.
  double p_good_bad = 0.0;
  double p_bad_good = 0.0;
  double loss_in_bad = 0.0;

  void validate() const;  // throws DataError when a probability leaves [0,1]
};

struct CapacityPoint {
  int64_t t_ms = 0;
  int kbps = 0;
};

struct NetworkTrace {
  int64_t duration_ms = 0;
  std::vector<CapacityPoint> capacity_schedule;
  double prop_delay_ms = 0.0;
  double queue_limit_ms = 500.0;  // drop-tail limit as drain time
  LossModel loss_model;
  ProfileTag profile = ProfileTag::high_bw;
  uint64_t seed = 0;

  double capacity_at(double t_ms) const;
  void validate() const;  // throws DataError
};

// Knobs for the randomized trace generator. Ranges are inclusive; segment
// lengths control how often the capacity step-changes.
struct ProfileParams {
  double low_bw_min_kbps = 150.0, low_bw_max_kbps = 950.0;
  double high_bw_min_kbps = 1000.0, high_bw_max_kbps = 8000.0;
  double stable_seg_min_ms = 10000.0, stable_seg_max_ms = 30000.0;
  double fluct_min_kbps = 200.0, fluct_max_kbps = 6000.0;
  double fluct_seg_min_ms = 2000.0, fluct_seg_max_ms = 8000.0;
  double burst_min_kbps = 500.0, burst_max_kbps = 4000.0;
  double ge_p_good_bad = 0.02, ge_p_bad_good = 0.3, ge_loss_in_bad = 0.5;
  double lte_start_min_kbps = 500.0, lte_start_max_kbps = 4000.0;
  double lte_step_sd_kbps = 800.0;
  double lte_min_kbps = 150.0, lte_max_kbps = 6000.0;
  double lte_seg_min_ms = 1000.0, lte_seg_max_ms = 5000.0;
  double iid_loss_max = 0.01;
  double queue_limit_ms = 500.0;
  int prop_delay_min_ms = 10, prop_delay_max_ms = 100;
};

NetworkTrace generate_trace(ProfileTag profile, uint64_t seed, int64_t duration_ms,
                            const ProfileParams& params = {});

// Flat capacity, no loss, fixed 40 ms propagation delay. Tagged low_bw below
// 1000 kbps and high_bw at or above it.
NetworkTrace make_stable_trace(double kbps, int64_t duration_ms, uint64_t seed);

void save_trace(const NetworkTrace& trace, const std::string& path);
NetworkTrace load_trace(const std::string& path);

enum class MediaType { video, audio, screenshare, probe };

const char* to_string(MediaType media);

struct Packet {
  int64_t seq = 0;
  int size_bytes = 0;
  MediaType media = MediaType::video;
  double send_ts_ms = 0.0;
  double arrive_ts_ms = 0.0;  // meaningful only when !lost and drained
  double queue_time_ms = 0.0;
  bool lost = false;
};

struct StepResult {
  std::vector<Packet> delivered;  // in arrival order
  std::vector<Packet> lost;       // in send order
};

// Single bottleneck link: FIFO byte queue drained at the piecewise-constant
// trace capacity, drop-tail by drain time, loss model applied per packet at
// admission. Time advances in fixed 60 ms ticks; drain and delivery times are
// resolved exactly inside each tick by walking send and capacity-change
// events, so results do not depend on how offered packets are batched.
class LinkSimulator {
 public:
  static constexpr int kTickMs = 60;

  LinkSimulator(const NetworkTrace& trace, Rng rng);

  // Offered packets must have send_ts_ms inside [clock, clock+60); throws
  // ContractError otherwise. Advances the clock by one tick.
  StepResult step(std::span<const Packet> offered);

  int64_t clock_ms() const { return clock_ms_; }
  int64_t sent_count() const { return sent_; }
  int64_t delivered_count() const { return delivered_; }
  int64_t lost_count() const { return lost_; }
  int64_t in_queue_count() const { return static_cast<int64_t>(queue_.size()); }
  double backlog_bytes() const;
  double current_capacity_kbps() const;

 private:
  struct QueueEntry {
    Packet pkt;
    double remaining_bytes = 0.0;
  };

  void drain_until(double t_end, StepResult& out);
  bool admit(const Packet& pkt, double now, StepResult& out);

  const NetworkTrace* trace_;
  Rng rng_;
  int64_t clock_ms_ = 0;
  std::deque<QueueEntry> queue_;
  double backlog_bytes_ = 0.0;
  double drain_clock_ms_ = 0.0;  // how far the queue has been drained
  bool ge_in_bad_ = false;
  int64_t sent_ = 0, delivered_ = 0, lost_ = 0;
};

}  // namespace merlin
