#include "merlin/netsim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "merlin/errors.hpp"
#include "merlin/util.hpp"

namespace merlin {
namespace {

using ordered_json = nlohmann::ordered_json;

constexpr double kTimeEps = 1e-9;

int round_kbps(double kbps) {
  const double clamped = std::clamp(kbps, 10.0, 8000.0);
  return static_cast<int>(std::lround(clamped));
}

}  // namespace

const char* to_string(ProfileTag tag) {
  switch (tag) {
    case ProfileTag::low_bw: return "low_bw";
    case ProfileTag::high_bw: return "high_bw";
    case ProfileTag::fluctuating_bw: return "fluctuating_bw";
    case ProfileTag::burst_loss: return "burst_loss";
    case ProfileTag::lte: return "lte";
  }
  throw ConfigError("invalid profile tag value");
}

ProfileTag profile_from_string(const std::string& name) {
  if (name == "low_bw") return ProfileTag::low_bw;
  if (name == "high_bw") return ProfileTag::high_bw;
  if (name == "fluctuating_bw") return ProfileTag::fluctuating_bw;
  if (name == "burst_loss") return ProfileTag::burst_loss;
  if (name == "lte") return ProfileTag::lte;
  throw ConfigError("unknown profile tag: " + name);
}

const char* to_string(LossKind kind) {
  switch (kind) {
    case LossKind::none: return "none";
    case LossKind::iid: return "iid";
    case LossKind::gilbert_elliott: return "gilbert_elliott";
  }
  throw ConfigError("invalid loss kind value");
}

LossKind loss_kind_from_string(const std::string& name) {
  if (name == "none") return LossKind::none;
  if (name == "iid") return LossKind::iid;
  if (name == "gilbert_elliott") return LossKind::gilbert_elliott;
  throw DataError("unknown loss model kind: " + name);
}

void LossModel::validate() const {
  for (double p : {iid_rate, p_good_bad, p_bad_good, loss_in_bad}) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw DataError("loss model probability outside [0,1]: " + format_double(p));
    }
  }
}

double NetworkTrace::capacity_at(double t_ms) const {
  // Last schedule point at or before t_ms; schedule starts at 0.
  auto it = std::upper_bound(
      capacity_schedule.begin(), capacity_schedule.end(), t_ms,
      [](double t, const CapacityPoint& p) { return t < static_cast<double>(p.t_ms); });
  if (it == capacity_schedule.begin()) {
    throw ContractError("capacity_at before schedule start");
  }
  return static_cast<double>(std::prev(it)->kbps);
}

void NetworkTrace::validate() const {
  if (duration_ms <= 0) throw DataError("trace duration_ms must be > 0");
  if (capacity_schedule.empty()) throw DataError("trace has no capacity points");
  if (capacity_schedule.front().t_ms != 0) {
    throw DataError("capacity schedule must start at t_ms = 0");
  }
  int64_t prev = -1;
  for (const CapacityPoint& p : capacity_schedule) {
    if (p.t_ms <= prev) throw DataError("capacity schedule not strictly increasing");
    if (p.kbps < 10 || p.kbps > 8000) {
      throw DataError("capacity outside [10, 8000] kbps: " + std::to_string(p.kbps));
    }
    prev = p.t_ms;
  }
  if (prop_delay_ms < 0.0) throw DataError("negative propagation delay");
  if (queue_limit_ms <= 0.0) throw DataError("queue limit must be positive");
  loss_model.validate();
}

NetworkTrace generate_trace(ProfileTag profile, uint64_t seed, int64_t duration_ms,
                            const ProfileParams& pp) {
  if (duration_ms < 1000) {
    throw ConfigError("trace duration_ms must be >= 1000, got " + std::to_string(duration_ms));
  }
  Rng rng = Rng(seed).fork(1000 + static_cast<uint64_t>(profile));
  NetworkTrace tr;
  tr.duration_ms = duration_ms;
  tr.seed = seed;
  tr.profile = profile;
  tr.queue_limit_ms = pp.queue_limit_ms;
  tr.prop_delay_ms =
      static_cast<double>(rng.uniform_int(pp.prop_delay_min_ms, pp.prop_delay_max_ms));

  // Piecewise-constant capacity, resampled per segment. Consecutive equal
  // values are redrawn so every schedule point is a real step change.
  auto sample_schedule = [&](double cap_lo, double cap_hi, double seg_lo, double seg_hi) {
    int64_t t = 0;
    int prev_kbps = -1;
    while (t < duration_ms) {
      int kbps = round_kbps(rng.uniform(cap_lo, cap_hi));
      while (kbps == prev_kbps) kbps = round_kbps(rng.uniform(cap_lo, cap_hi));
      tr.capacity_schedule.push_back({t, kbps});
      prev_kbps = kbps;
      t += std::max<int64_t>(60, std::llround(rng.uniform(seg_lo, seg_hi)));
    }
  };
  auto sample_iid_loss = [&] {
    tr.loss_model.kind = LossKind::iid;
    tr.loss_model.iid_rate = rng.uniform(0.0, pp.iid_loss_max);
  };

  switch (profile) {
    case ProfileTag::low_bw:
      sample_schedule(pp.low_bw_min_kbps, pp.low_bw_max_kbps, pp.stable_seg_min_ms,
                      pp.stable_seg_max_ms);
      sample_iid_loss();
      break;
    case ProfileTag::high_bw:
      sample_schedule(pp.high_bw_min_kbps, pp.high_bw_max_kbps, pp.stable_seg_min_ms,
                      pp.stable_seg_max_ms);
      sample_iid_loss();
      break;
    case ProfileTag::fluctuating_bw: {
      // Cap the segment length so short traces still fluctuate.
      const double seg_hi = std::min(pp.fluct_seg_max_ms, static_cast<double>(duration_ms) / 4.0);
      const double seg_lo = std::min(pp.fluct_seg_min_ms, seg_hi);
      sample_schedule(pp.fluct_min_kbps, pp.fluct_max_kbps, seg_lo, seg_hi);
      sample_iid_loss();
      break;
    }
    case ProfileTag::burst_loss:
      sample_schedule(pp.burst_min_kbps, pp.burst_max_kbps, pp.stable_seg_min_ms,
                      pp.stable_seg_max_ms);
      tr.loss_model.kind = LossKind::gilbert_elliott;
      tr.loss_model.p_good_bad = pp.ge_p_good_bad;
      tr.loss_model.p_bad_good = pp.ge_p_bad_good;
      tr.loss_model.loss_in_bad = pp.ge_loss_in_bad;
      break;
    case ProfileTag::lte: {
      double v = rng.uniform(pp.lte_start_min_kbps, pp.lte_start_max_kbps);
      int64_t t = 0;
      while (t < duration_ms) {
        tr.capacity_schedule.push_back({t, round_kbps(v)});
        t += std::max<int64_t>(60, std::llround(rng.uniform(pp.lte_seg_min_ms, pp.lte_seg_max_ms)));
        v = std::clamp(v + rng.normal(0.0, pp.lte_step_sd_kbps), pp.lte_min_kbps,
                       pp.lte_max_kbps);
      }
      sample_iid_loss();
      break;
    }
  }
  tr.validate();
  return tr;
}

NetworkTrace make_stable_trace(double kbps, int64_t duration_ms, uint64_t seed) {
  NetworkTrace tr;
  tr.duration_ms = duration_ms;
  tr.capacity_schedule.push_back({0, round_kbps(kbps)});
  tr.prop_delay_ms = 40.0;
  tr.queue_limit_ms = 500.0;
  tr.loss_model.kind = LossKind::none;
  tr.profile = kbps < 1000.0 ? ProfileTag::low_bw : ProfileTag::high_bw;
  tr.seed = seed;
  tr.validate();
  return tr;
}

void save_trace(const NetworkTrace& trace, const std::string& path) {
  trace.validate();
  ordered_json loss;
  loss["kind"] = to_string(trace.loss_model.kind);
  if (trace.loss_model.kind == LossKind::iid) {
    loss["iid_rate"] = trace.loss_model.iid_rate;
  } else if (trace.loss_model.kind == LossKind::gilbert_elliott) {
    loss["p_good_bad"] = trace.loss_model.p_good_bad;
    loss["p_bad_good"] = trace.loss_model.p_bad_good;
    loss["loss_in_bad"] = trace.loss_model.loss_in_bad;
  }
  ordered_json header;
  header["duration"] = trace.duration_ms;
  header["prop_delay"] = trace.prop_delay_ms;
  header["queue_limit"] = trace.queue_limit_ms;
  header["loss_model"] = loss;
  header["profile"] = to_string(trace.profile);
  header["seed"] = trace.seed;

  TextWriter out(path);
  out.write_line(header.dump());
  for (const CapacityPoint& p : trace.capacity_schedule) {
    ordered_json point;
    point["t_ms"] = p.t_ms;
    point["kbps"] = p.kbps;
    out.write_line(point.dump());
  }
  out.close();
}

NetworkTrace load_trace(const std::string& path) {
  TextReader in(path);
  auto fail = [&](const std::string& what) -> DataError {
    return DataError("trace file " + path + ": line " + std::to_string(in.line_number()) +
                     " (byte " + std::to_string(in.line_offset()) + "): " + what);
  };
  std::string line;
  if (!in.next_line(line)) throw fail("missing header line");
  NetworkTrace tr;
  try {
    const ordered_json header = ordered_json::parse(line);
    for (const char* key : {"duration", "prop_delay", "queue_limit", "loss_model", "profile",
                            "seed"}) {
      if (!header.contains(key)) throw fail(std::string("header missing key \"") + key + "\"");
    }
    tr.duration_ms = header.at("duration").get<int64_t>();
    tr.prop_delay_ms = header.at("prop_delay").get<double>();
    tr.queue_limit_ms = header.at("queue_limit").get<double>();
    tr.profile = profile_from_string(header.at("profile").get<std::string>());
    tr.seed = header.at("seed").get<uint64_t>();
    const ordered_json& loss = header.at("loss_model");
    tr.loss_model.kind = loss_kind_from_string(loss.at("kind").get<std::string>());
    tr.loss_model.iid_rate = loss.value("iid_rate", 0.0);
    tr.loss_model.p_good_bad = loss.value("p_good_bad", 0.0);
    tr.loss_model.p_bad_good = loss.value("p_bad_good", 0.0);
    tr.loss_model.loss_in_bad = loss.value("loss_in_bad", 0.0);
  } catch (const DataError&) {
    throw;
  } catch (const ConfigError& e) {
    throw fail(e.what());
  } catch (const ordered_json::exception& e) {
    throw fail(std::string("bad header: ") + e.what());
  }
  while (in.next_line(line)) {
    try {
      const ordered_json point = ordered_json::parse(line);
      tr.capacity_schedule.push_back(
          {point.at("t_ms").get<int64_t>(), point.at("kbps").get<int>()});
    } catch (const ordered_json::exception& e) {
      throw fail(std::string("bad capacity point: ") + e.what());
    }
  }
  if (in.truncated_last_line()) throw fail("file ends mid-line (truncated)");
  try {
    tr.validate();
  } catch (const DataError& e) {
    throw DataError("trace file " + path + ": " + e.what());
  }
  return tr;
}

const char* to_string(MediaType media) {
  switch (media) {
    case MediaType::video: return "video";
    case MediaType::audio: return "audio";
    case MediaType::screenshare: return "screenshare";
    case MediaType::probe: return "probe";
  }
  throw ConfigError("invalid media type value");
}

LinkSimulator::LinkSimulator(const NetworkTrace& trace, Rng rng)
    : trace_(&trace), rng_(rng) {
  trace.validate();
}

double LinkSimulator::backlog_bytes() const { return backlog_bytes_; }

double LinkSimulator::current_capacity_kbps() const {
  return trace_->capacity_at(static_cast<double>(clock_ms_));
}

// Drains the FIFO forward to t_end, splitting at capacity change points so the
// byte budget of each span uses a single rate. kbps equals bits per ms, so a
// span of dt ms drains kbps*dt/8 bytes.
void LinkSimulator::drain_until(double t_end, StepResult& out) {
  while (drain_clock_ms_ < t_end - kTimeEps) {
    const double cap = trace_->capacity_at(drain_clock_ms_);
    double seg_end = t_end;
    auto it = std::upper_bound(
        trace_->capacity_schedule.begin(), trace_->capacity_schedule.end(), drain_clock_ms_,
        [](double t, const CapacityPoint& p) {
          return t < static_cast<double>(p.t_ms) - kTimeEps;
        });
    if (it != trace_->capacity_schedule.end()) {
      seg_end = std::min(seg_end, static_cast<double>(it->t_ms));
    }
    double t = drain_clock_ms_;
    while (!queue_.empty() && t < seg_end - kTimeEps) {
      QueueEntry& head = queue_.front();
      const double need_ms = head.remaining_bytes * 8.0 / cap;
      if (t + need_ms <= seg_end + kTimeEps) {
        t += need_ms;
        backlog_bytes_ -= head.remaining_bytes;
        Packet done = head.pkt;
        done.arrive_ts_ms = t + trace_->prop_delay_ms;
        done.queue_time_ms = t - done.send_ts_ms;
        queue_.pop_front();
        ++delivered_;
        out.delivered.push_back(done);
      } else {
        const double drained = cap * (seg_end - t) / 8.0;
        head.remaining_bytes -= drained;
        backlog_bytes_ -= drained;
        t = seg_end;
      }
    }
    drain_clock_ms_ = seg_end;
  }
  if (backlog_bytes_ < 0.0) backlog_bytes_ = 0.0;
}

bool LinkSimulator::admit(const Packet& pkt, double now, StepResult& out) {
  ++sent_;
  bool drop = false;
  switch (trace_->loss_model.kind) {
    case LossKind::none:
      break;
    case LossKind::iid:
      drop = rng_.bernoulli(trace_->loss_model.iid_rate);
      break;
    case LossKind::gilbert_elliott:
      // One chain transition per offered packet, then a loss draw in bad.
      if (ge_in_bad_) {
        if (rng_.bernoulli(trace_->loss_model.p_bad_good)) ge_in_bad_ = false;
      } else {
        if (rng_.bernoulli(trace_->loss_model.p_good_bad)) ge_in_bad_ = true;
      }
      if (ge_in_bad_) drop = rng_.bernoulli(trace_->loss_model.loss_in_bad);
      break;
  }
  if (!drop) {
    const double cap = trace_->capacity_at(now);
    const double backlog_after_ms = (backlog_bytes_ + pkt.size_bytes) * 8.0 / cap;
    if (backlog_after_ms > trace_->queue_limit_ms + kTimeEps) drop = true;
  }
  if (drop) {
    Packet gone = pkt;
    gone.lost = true;
    ++lost_;
    out.lost.push_back(gone);
    return false;
  }
  backlog_bytes_ += pkt.size_bytes;
  queue_.push_back({pkt, static_cast<double>(pkt.size_bytes)});
  return true;
}

StepResult LinkSimulator::step(std::span<const Packet> offered) {
  const double t0 = static_cast<double>(clock_ms_);
  const double t1 = t0 + kTickMs;
  for (const Packet& p : offered) {
    if (!(p.send_ts_ms >= t0 - kTimeEps && p.send_ts_ms < t1 - kTimeEps)) {
      throw ContractError("packet send_ts_ms " + format_double(p.send_ts_ms) +
                          " outside step window [" + format_double(t0) + ", " +
                          format_double(t1) + ")");
    }
    if (p.size_bytes <= 0) throw ContractError("packet size_bytes must be positive");
  }
  std::vector<size_t> order(offered.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return offered[a].send_ts_ms < offered[b].send_ts_ms;
  });

  StepResult out;
  for (size_t idx : order) {
    const Packet& p = offered[idx];
    drain_until(p.send_ts_ms, out);
    admit(p, p.send_ts_ms, out);
  }
  drain_until(t1, out);
  clock_ms_ += kTickMs;
  return out;
}

}  // namespace merlin
