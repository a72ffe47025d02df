#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "merlin/action_codec.hpp"
#include "merlin/errors.hpp"
#include "merlin/features.hpp"
#include "merlin/media.hpp"
#include "merlin/netsim.hpp"
#include "merlin/rng.hpp"
#include "merlin/util.hpp"

using namespace merlin;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const std::string& name) {
  return (fs::temp_directory_path() / ("merlin_core_" + name)).string();
}

}  // namespace

// ---------------------------------------------------------------- rng

TEST_CASE("rng: same seed, same stream") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(42), d(42);
  for (int i = 0; i < 100; ++i) {
    CHECK(c.uniform() == d.uniform());
    CHECK(c.normal() == d.normal());
  }
}

TEST_CASE("rng: uniform ranges") {
  Rng r(7);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const double v = r.uniform(-3.0, 5.0);
    CHECK(v >= -3.0);
    CHECK(v < 5.0);
  }
}

TEST_CASE("rng: uniform_int inclusive and covering") {
  Rng r(9);
  std::set<int64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const int64_t v = r.uniform_int(2, 5);
    CHECK(v >= 2);
    CHECK(v <= 5);
    seen.insert(v);
  }
  CHECK(seen.size() == 4);
  for (int i = 0; i < 100; ++i) CHECK(r.uniform_int(3, 3) == 3);
}

TEST_CASE("rng: bernoulli endpoints") {
  Rng r(11);
  for (int i = 0; i < 1000; ++i) {
    CHECK_FALSE(r.bernoulli(0.0));
    CHECK(r.bernoulli(1.0));
  }
}

TEST_CASE("rng: normal moments") {
  Rng r(13);
  double sum = 0, sq = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal(1.0, 2.0);
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(mean == doctest::Approx(1.0).epsilon(0.05));
  CHECK(std::sqrt(var) == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("rng: fork is independent of draws") {
  Rng a(123);
  for (int i = 0; i < 17; ++i) a.next_u64();
  Rng forked_after = a.fork(5);
  Rng forked_fresh = Rng(123).fork(5);
  for (int i = 0; i < 20; ++i) CHECK(forked_after.next_u64() == forked_fresh.next_u64());
  // distinct streams diverge
  Rng s1 = Rng(123).fork(1), s2 = Rng(123).fork(2);
  bool any_diff = false;
  for (int i = 0; i < 10; ++i) any_diff = any_diff || (s1.next_u64() != s2.next_u64());
  CHECK(any_diff);
}

TEST_CASE("rng: shuffle permutes deterministically") {
  std::vector<int> v1(50), v2(50);
  for (int i = 0; i < 50; ++i) v1[i] = v2[i] = i;
  Rng(77).shuffle(v1);
  Rng(77).shuffle(v2);
  CHECK(v1 == v2);
  std::vector<int> sorted = v1;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) CHECK(sorted[i] == i);
  std::vector<int> v3 = v1;
  Rng(78).shuffle(v3);
  CHECK(v3 != v1);
}

TEST_CASE("rng: derive_seed separates streams") {
  std::set<uint64_t> seeds;
  for (uint64_t s = 0; s < 20; ++s) seeds.insert(derive_seed(1000, s));
  CHECK(seeds.size() == 20);
}

// ---------------------------------------------------------------- util

TEST_CASE("util: float formatting round-trips exactly") {
  const float fs[] = {0.0f, 1.0f, -1.5f, 0.1f, 3.4028235e38f, 1.1754944e-38f,
                      123456.78f, -0.000123f};
  for (float f : fs) CHECK(parse_float(format_float(f), "t") == f);
  const double ds[] = {0.0, 1.0, -1.0 / 3.0, 1e-300, 8.98846567431158e307, 0.1};
  for (double d : ds) CHECK(parse_double(format_double(d), "t") == d);
}

TEST_CASE("util: parse rejects garbage") {
  CHECK_THROWS_AS(parse_float("abc", "t"), DataError);
  CHECK_THROWS_AS(parse_double("", "t"), DataError);
  CHECK_THROWS_AS(parse_double("1.0x", "t"), DataError);
  CHECK_THROWS_AS(parse_int("12.5", "t"), DataError);
  CHECK(parse_int("-42", "t") == -42);
}

TEST_CASE("util: text writer/reader round-trip, plain and gzip") {
  for (const char* ext : {".txt", ".txt.gz"}) {
    const std::string path = temp_path(std::string("roundtrip") + ext);
    {
      TextWriter w(path);
      w.write_line("first line");
      w.write_line("");
      w.write("partial ");
      w.write_line("assembled");
    }
    TextReader r(path);
    std::string line;
    CHECK(r.next_line(line));
    CHECK(line == "first line");
    CHECK(r.line_number() == 1);
    CHECK(r.next_line(line));
    CHECK(line.empty());
    CHECK(r.next_line(line));
    CHECK(line == "partial assembled");
    CHECK_FALSE(r.next_line(line));
    CHECK_FALSE(r.truncated_last_line());
    fs::remove(path);
  }
}

TEST_CASE("util: truncated final line is sticky") {
  const std::string path = temp_path("trunc.txt");
  write_text_file(path, "complete\nno newline at end");
  TextReader r(path);
  std::string line;
  CHECK(r.next_line(line));
  CHECK_FALSE(r.truncated_last_line());
  CHECK(r.next_line(line));
  CHECK(line == "no newline at end");
  CHECK(r.truncated_last_line());
  CHECK_FALSE(r.next_line(line));
  CHECK(r.truncated_last_line());
  fs::remove(path);
}

TEST_CASE("util: missing file raises data error") {
  CHECK_THROWS_AS(TextReader("/nonexistent/deeply/missing.txt"), DataError);
  CHECK_THROWS_AS(read_text_file("/nonexistent/deeply/missing.txt"), DataError);
}

// ---------------------------------------------------------------- action codec

TEST_CASE("codec: endpoints are exact") {
  CHECK(encode_action(10.0) == 0.0);
  CHECK(encode_action(8000.0) == 1.0);
  CHECK(decode_action(0.0) == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(decode_action(1.0) == doctest::Approx(8000.0).epsilon(1e-12));
}

TEST_CASE("codec: out-of-range inputs clamp") {
  CHECK(encode_action(1.0) == 0.0);
  CHECK(encode_action(1e9) == 1.0);
  CHECK(decode_action(-0.25) == decode_action(0.0));
  CHECK(decode_action(1.25) == decode_action(1.0));
}

TEST_CASE("codec: round-trip and monotonicity") {
  Rng r(21);
  double prev = -1.0;
  for (int i = 0; i < 1000; ++i) {
    const double kbps = decode_action(i / 999.0);
    CHECK(kbps >= prev);  // monotone decode
    prev = kbps;
    const double v = std::exp(r.uniform(std::log(10.0), std::log(8000.0)));
    const double rt = decode_action(encode_action(v));
    CHECK(std::fabs(rt - v) / v <= 1e-9);
  }
}

// ---------------------------------------------------------------- netsim

TEST_CASE("netsim: stable trace shape") {
  NetworkTrace t = make_stable_trace(700.0, 30000, 3);
  t.validate();
  CHECK(t.capacity_at(0.0) == doctest::Approx(700.0));
  CHECK(t.capacity_at(29999.0) == doctest::Approx(700.0));
  CHECK(t.profile == ProfileTag::low_bw);
  CHECK(make_stable_trace(1500.0, 1000, 3).profile == ProfileTag::high_bw);
  CHECK(t.loss_model.kind == LossKind::none);
}

TEST_CASE("netsim: generated traces are deterministic in the seed") {
  for (ProfileTag tag : {ProfileTag::low_bw, ProfileTag::high_bw, ProfileTag::fluctuating_bw,
                         ProfileTag::burst_loss, ProfileTag::lte}) {
    NetworkTrace a = generate_trace(tag, 55, 60000);
    NetworkTrace b = generate_trace(tag, 55, 60000);
    a.validate();
    REQUIRE(a.capacity_schedule.size() == b.capacity_schedule.size());
    for (size_t i = 0; i < a.capacity_schedule.size(); ++i) {
      CHECK(a.capacity_schedule[i].t_ms == b.capacity_schedule[i].t_ms);
      CHECK(a.capacity_schedule[i].kbps == b.capacity_schedule[i].kbps);
    }
    CHECK(a.prop_delay_ms == b.prop_delay_ms);
    NetworkTrace c = generate_trace(tag, 56, 60000);
    REQUIRE(!c.capacity_schedule.empty());
    const bool differs = c.capacity_schedule.size() != a.capacity_schedule.size() ||
                         c.capacity_schedule[0].kbps != a.capacity_schedule[0].kbps ||
                         c.prop_delay_ms != a.prop_delay_ms;
    CHECK(differs);
  }
}

TEST_CASE("netsim: profile tags match generated content") {
  NetworkTrace low = generate_trace(ProfileTag::low_bw, 1, 30000);
  for (const auto& p : low.capacity_schedule) CHECK(p.kbps < 1000);
  NetworkTrace high = generate_trace(ProfileTag::high_bw, 1, 30000);
  for (const auto& p : high.capacity_schedule) CHECK(p.kbps >= 1000);
  NetworkTrace burst = generate_trace(ProfileTag::burst_loss, 1, 30000);
  CHECK(burst.loss_model.kind == LossKind::gilbert_elliott);
  CHECK(burst.loss_model.p_good_bad > 0.0);
}

TEST_CASE("netsim: trace file round-trip") {
  NetworkTrace t = generate_trace(ProfileTag::fluctuating_bw, 99, 45000);
  const std::string path = temp_path("trace.json");
  save_trace(t, path);
  NetworkTrace back = load_trace(path);
  CHECK(back.duration_ms == t.duration_ms);
  CHECK(back.prop_delay_ms == t.prop_delay_ms);
  CHECK(back.queue_limit_ms == t.queue_limit_ms);
  CHECK(back.profile == t.profile);
  CHECK(back.seed == t.seed);
  REQUIRE(back.capacity_schedule.size() == t.capacity_schedule.size());
  for (size_t i = 0; i < t.capacity_schedule.size(); ++i) {
    CHECK(back.capacity_schedule[i].t_ms == t.capacity_schedule[i].t_ms);
    CHECK(back.capacity_schedule[i].kbps == t.capacity_schedule[i].kbps);
  }
  CHECK(back.loss_model.kind == t.loss_model.kind);
  fs::remove(path);
}

TEST_CASE("netsim: loading malformed traces fails loudly") {
  const std::string path = temp_path("bad_trace.json");
  write_text_file(path, "this is not json\n");
  CHECK_THROWS_AS(load_trace(path), DataError);
  write_text_file(path, "{\"duration_ms\": 1000}\n");
  CHECK_THROWS_AS(load_trace(path), DataError);
  CHECK_THROWS_AS(load_trace("/nonexistent/missing_trace.json"), DataError);
  fs::remove(path);
}

TEST_CASE("netsim: validation rejects broken inputs") {
  NetworkTrace t = make_stable_trace(500.0, 10000, 1);
  t.duration_ms = 0;
  CHECK_THROWS_AS(t.validate(), DataError);
  t = make_stable_trace(500.0, 10000, 1);
  t.capacity_schedule.clear();
  CHECK_THROWS_AS(t.validate(), DataError);
  LossModel lm;
  lm.kind = LossKind::iid;
  lm.iid_rate = 1.5;
  CHECK_THROWS_AS(lm.validate(), DataError);
  lm = LossModel{};
  lm.kind = LossKind::gilbert_elliott;
  lm.p_good_bad = -0.1;
  CHECK_THROWS_AS(lm.validate(), DataError);
}

namespace {

Packet mk_packet(int64_t seq, int bytes, double send_ts) {
  Packet p;
  p.seq = seq;
  p.size_bytes = bytes;
  p.media = MediaType::video;
  p.send_ts_ms = send_ts;
  return p;
}

}  // namespace

TEST_CASE("netsim: fluid drain matches hand computation") {
  // 800 kbps = 100 bytes/ms. Ten 1200-byte packets sent every 6 ms starting
  // at t=0 keep the link busy for the whole 60 ms tick, so exactly 6000 bytes
  // drain and 6000 remain queued.
  NetworkTrace t = make_stable_trace(800.0, 60000, 1);
  t.prop_delay_ms = 0.0;
  t.queue_limit_ms = 1e9;
  LinkSimulator sim(t, Rng(1));
  std::vector<Packet> offered;
  for (int k = 0; k < 10; ++k) offered.push_back(mk_packet(k, 1200, 6.0 * k));
  StepResult res = sim.step(offered);
  CHECK(sim.backlog_bytes() == doctest::Approx(6000.0).epsilon(1e-12));
  CHECK(res.lost.empty());
  CHECK(sim.sent_count() == 10);
  CHECK(sim.delivered_count() + sim.in_queue_count() == 10);
  // Packet k finishes draining at 12*(k+1) ms.
  for (size_t i = 0; i < res.delivered.size(); ++i) {
    const Packet& p = res.delivered[i];
    CHECK(p.arrive_ts_ms == doctest::Approx(12.0 * (static_cast<double>(p.seq) + 1)));
    CHECK(p.queue_time_ms == doctest::Approx(p.arrive_ts_ms - p.send_ts_ms));
  }
}

TEST_CASE("netsim: capacity change mid-tick is honored exactly") {
  NetworkTrace t = make_stable_trace(800.0, 60000, 1);
  t.capacity_schedule = {{0, 800}, {30, 1600}};
  t.prop_delay_ms = 0.0;
  t.queue_limit_ms = 1e9;
  LinkSimulator sim(t, Rng(1));
  std::vector<Packet> offered;
  for (int k = 0; k < 10; ++k) offered.push_back(mk_packet(k, 1200, 6.0 * k));
  sim.step(offered);
  // Drained bytes: 100 B/ms * 30 ms + 200 B/ms * 30 ms = 9000.
  CHECK(sim.backlog_bytes() == doctest::Approx(3000.0).epsilon(1e-12));
}

TEST_CASE("netsim: drop-tail bounds the queue") {
  NetworkTrace t = make_stable_trace(800.0, 60000, 1);
  t.queue_limit_ms = 100.0;  // 10000 bytes at 100 B/ms
  LinkSimulator sim(t, Rng(1));
  std::vector<Packet> offered;
  for (int k = 0; k < 100; ++k) offered.push_back(mk_packet(k, 1200, 0.5 * k));
  StepResult res = sim.step(offered);
  CHECK(!res.lost.empty());
  for (const Packet& p : res.lost) CHECK(p.lost);
  CHECK(sim.backlog_bytes() <= 100.0 * 100.0 + 1200.0);
  CHECK(sim.sent_count() == 100);
  CHECK(sim.delivered_count() + sim.lost_count() + sim.in_queue_count() == 100);
}

TEST_CASE("netsim: certain iid loss drops everything") {
  NetworkTrace t = make_stable_trace(5000.0, 60000, 1);
  t.loss_model.kind = LossKind::iid;
  t.loss_model.iid_rate = 1.0;
  LinkSimulator sim(t, Rng(4));
  std::vector<Packet> offered;
  for (int k = 0; k < 20; ++k) offered.push_back(mk_packet(k, 500, 3.0 * k));
  StepResult res = sim.step(offered);
  CHECK(res.delivered.empty());
  CHECK(res.lost.size() == 20);
  CHECK(sim.lost_count() == 20);
}

TEST_CASE("netsim: burst chain with no recovery ends up all bad") {
  NetworkTrace t = make_stable_trace(5000.0, 60000, 1);
  t.loss_model.kind = LossKind::gilbert_elliott;
  t.loss_model.p_good_bad = 1.0;
  t.loss_model.p_bad_good = 0.0;
  t.loss_model.loss_in_bad = 1.0;
  LinkSimulator sim(t, Rng(4));
  int64_t delivered = 0;
  for (int s = 0; s < 5; ++s) {
    std::vector<Packet> offered;
    for (int k = 0; k < 10; ++k)
      offered.push_back(mk_packet(s * 10 + k, 500, s * 60.0 + 3.0 * k));
    StepResult res = sim.step(offered);
    delivered += static_cast<int64_t>(res.delivered.size());
  }
  // At most the very first packet can slip through before the chain flips.
  CHECK(sim.lost_count() >= 49);
  CHECK(delivered + sim.lost_count() + sim.in_queue_count() == 50);
}

TEST_CASE("netsim: conservation fuzz over random offered load") {
  Rng fuzz(2024);
  for (int rep = 0; rep < 5; ++rep) {
    const auto tag = static_cast<ProfileTag>(fuzz.uniform_int(0, 4));
    NetworkTrace t = generate_trace(tag, fuzz.next_u64(), 6000);
    LinkSimulator sim(t, Rng(fuzz.next_u64()));
    int64_t offered_total = 0;
    for (int s = 0; s < 100; ++s) {
      std::vector<Packet> offered;
      const int n = static_cast<int>(fuzz.uniform_int(0, 30));
      for (int k = 0; k < n; ++k) {
        offered.push_back(mk_packet(offered_total + k,
                                    static_cast<int>(fuzz.uniform_int(40, 1500)),
                                    s * 60.0 + fuzz.uniform(0.0, 59.999)));
      }
      std::sort(offered.begin(), offered.end(),
                [](const Packet& a, const Packet& b) { return a.send_ts_ms < b.send_ts_ms; });
      offered_total += n;
      sim.step(offered);
      CHECK(sim.sent_count() == offered_total);
      CHECK(sim.delivered_count() + sim.lost_count() + sim.in_queue_count() == offered_total);
      CHECK(sim.clock_ms() == (s + 1) * 60);
    }
  }
}

TEST_CASE("netsim: packets outside the tick window are rejected") {
  NetworkTrace t = make_stable_trace(1000.0, 60000, 1);
  LinkSimulator sim(t, Rng(1));
  std::vector<Packet> offered = {mk_packet(0, 100, 61.0)};
  CHECK_THROWS_AS(sim.step(offered), ContractError);
}

TEST_CASE("netsim: identical runs produce identical deliveries") {
  NetworkTrace t = generate_trace(ProfileTag::burst_loss, 31, 6000);
  auto run = [&]() {
    LinkSimulator sim(t, Rng(99));
    std::vector<double> arrivals;
    for (int s = 0; s < 80; ++s) {
      std::vector<Packet> offered;
      for (int k = 0; k < 12; ++k) offered.push_back(mk_packet(s * 12 + k, 900, s * 60.0 + 5.0 * k));
      for (const Packet& p : sim.step(offered).delivered) arrivals.push_back(p.arrive_ts_ms);
    }
    return arrivals;
  };
  CHECK(run() == run());
}

// ---------------------------------------------------------------- media

namespace {

double total_bytes(const std::vector<Packet>& pkts, MediaType media) {
  double b = 0;
  for (const Packet& p : pkts)
    if (p.media == media) b += p.size_bytes;
  return b;
}

}  // namespace

TEST_CASE("media: audio-only stream holds the audio rate") {
  MediaConfig cfg;
  cfg.call_kind = CallKind::audio_only;
  cfg.estimate_feedback_delay_ms = 0.0;
  MediaSource src(cfg);
  double audio = 0, other = 0;
  for (int s = 0; s < 50; ++s) {
    auto pkts = src.encode_step(2000.0, s * 60);
    audio += total_bytes(pkts, MediaType::audio);
    other += total_bytes(pkts, MediaType::video) + total_bytes(pkts, MediaType::screenshare);
  }
  CHECK(other == 0.0);
  const double expected = cfg.audio_rate_kbps * 3000.0 / 8.0;  // 3 s of audio
  CHECK(audio == doctest::Approx(expected).epsilon(0.05));
}

TEST_CASE("media: video fills the estimate without overshooting") {
  MediaConfig cfg;
  cfg.call_kind = CallKind::audio_video;
  cfg.estimate_feedback_delay_ms = 0.0;
  cfg.video_start_ms = 0;
  MediaSource src(cfg);
  const double est = 1500.0;
  double bytes = 0;
  int64_t ticks = 100;
  for (int64_t s = 0; s < ticks; ++s) {
    auto pkts = src.encode_step(est, s * 60);
    for (const Packet& p : pkts) {
      bytes += p.size_bytes;
      CHECK(p.send_ts_ms >= s * 60.0);
      CHECK(p.send_ts_ms < (s + 1) * 60.0);
    }
  }
  const double budget = est * static_cast<double>(ticks) * 60.0 / 8.0;  // bytes
  CHECK(bytes <= budget + cfg.packet_mtu_bytes);
  CHECK(bytes >= 0.90 * budget);
}

TEST_CASE("media: video respects its start time") {
  MediaConfig cfg;
  cfg.call_kind = CallKind::audio_video;
  cfg.video_start_ms = 600;
  cfg.estimate_feedback_delay_ms = 0.0;
  MediaSource src(cfg);
  for (int s = 0; s < 10; ++s) {
    auto pkts = src.encode_step(3000.0, s * 60);
    const double video = total_bytes(pkts, MediaType::video);
    if ((s + 1) * 60 <= 600) {
      CHECK(video == 0.0);
    }
  }
}

TEST_CASE("media: screenshare calls carve out screenshare packets") {
  MediaConfig cfg;
  cfg.call_kind = CallKind::audio_video_screenshare;
  cfg.estimate_feedback_delay_ms = 0.0;
  MediaSource src(cfg);
  double share = 0;
  for (int s = 0; s < 60; ++s) share += total_bytes(src.encode_step(4000.0, s * 60), MediaType::screenshare);
  CHECK(share > 0.0);
}

TEST_CASE("media: probes appear on schedule") {
  MediaConfig cfg;
  cfg.call_kind = CallKind::audio_video;
  cfg.probe_interval_ms = 2000;
  cfg.estimate_feedback_delay_ms = 0.0;
  MediaSource src(cfg);
  std::vector<int64_t> probe_ticks;
  for (int s = 0; s < 100; ++s) {
    auto pkts = src.encode_step(1000.0, s * 60);
    for (const Packet& p : pkts)
      if (p.media == MediaType::probe) {
        probe_ticks.push_back(s);
        break;
      }
  }
  CHECK(probe_ticks.size() >= 2);
  for (size_t i = 1; i < probe_ticks.size(); ++i) {
    const int64_t gap_ms = (probe_ticks[i] - probe_ticks[i - 1]) * 60;
    CHECK(gap_ms >= 1920);  // one tick of slack around the 2 s schedule
    CHECK(gap_ms <= 2100);
  }
}

TEST_CASE("media: estimate changes apply after the feedback delay") {
  MediaConfig cfg;
  cfg.call_kind = CallKind::audio_video;
  cfg.estimate_feedback_delay_ms = 120.0;  // two ticks
  MediaSource src(cfg);
  // Warm up at a low rate, then jump; the jump must not take effect
  // immediately.
  double low_tick_bytes = 0;
  for (int s = 0; s < 20; ++s) {
    auto p = src.encode_step(200.0, s * 60);
    low_tick_bytes = 0;
    for (const Packet& pk : p) low_tick_bytes += pk.size_bytes;
  }
  auto first_after_jump = src.encode_step(6000.0, 20 * 60);
  double jump_bytes = 0;
  for (const Packet& pk : first_after_jump) jump_bytes += pk.size_bytes;
  // Still paced by the delayed low estimate: far below the 6 Mbps budget.
  CHECK(jump_bytes * 8.0 / 60.0 < 1000.0);
}

TEST_CASE("media: call mix matches the advertised fractions") {
  int audio_only = 0, av = 0, share = 0;
  const int n = 2000;
  for (int i = 0; i < n; ++i) {
    MediaConfig cfg = sample_call_config(static_cast<uint64_t>(i));
    CHECK(cfg.video_start_ms >= 0);
    CHECK(cfg.video_start_ms <= 10000);
    switch (cfg.call_kind) {
      case CallKind::audio_only: ++audio_only; break;
      case CallKind::audio_video: ++av; break;
      case CallKind::audio_video_screenshare: ++share; break;
    }
  }
  CHECK(audio_only / static_cast<double>(n) == doctest::Approx(0.20).epsilon(0.25));
  CHECK(av / static_cast<double>(n) == doctest::Approx(0.70).epsilon(0.15));
  CHECK(share / static_cast<double>(n) == doctest::Approx(0.10).epsilon(0.35));
  MediaConfig a = sample_call_config(42), b = sample_call_config(42);
  CHECK(a.call_kind == b.call_kind);
  CHECK(a.video_start_ms == b.video_start_ms);
}

// ---------------------------------------------------------------- features

namespace {

Packet feat_packet(int bytes, MediaType media, double queue_ms, bool lost) {
  Packet p;
  p.size_bytes = bytes;
  p.media = media;
  p.queue_time_ms = queue_ms;
  p.lost = lost;
  return p;
}

}  // namespace

TEST_CASE("features: interval aggregation matches hand numbers") {
  std::vector<Packet> pkts = {
      feat_packet(600, MediaType::video, 10.0, false),
      feat_packet(600, MediaType::audio, 20.0, false),
      feat_packet(500, MediaType::video, 0.0, true),
  };
  IntervalStats s = aggregate_interval(pkts, 60.0);
  CHECK(s.recv_rate_kbps == doctest::Approx(1200.0 * 8.0 / 60.0));
  CHECK(s.avg_queue_ms == doctest::Approx(15.0));
  CHECK(s.loss_ratio == doctest::Approx(1.0 / 3.0));
  CHECK(s.avg_lost_packets == doctest::Approx(1.0));
  CHECK(s.media_mass[0] == doctest::Approx(0.5));
  CHECK(s.media_mass[1] == doctest::Approx(0.5));
  CHECK(s.media_mass[2] == 0.0);
  CHECK(s.media_mass[3] == 0.0);
}

TEST_CASE("features: normalizer anchors") {
  CHECK(normalize_recv_rate(10.0) == doctest::Approx(0.0));
  CHECK(normalize_recv_rate(8000.0) == doctest::Approx(1.0));
  CHECK(normalize_recv_rate(0.0) == 0.0);
  CHECK(normalize_queue_ms(500.0) == doctest::Approx(0.5));
  CHECK(normalize_queue_ms(5000.0) == 1.0);
  CHECK(normalize_loss_ratio(0.25) == doctest::Approx(0.25));
  CHECK(normalize_loss_ratio(2.0) == 1.0);
  CHECK(normalize_avg_lost(25.0) == doctest::Approx(0.5));
  CHECK(normalize_avg_lost(500.0) == 1.0);
}

TEST_CASE("features: slot grouping covers the layout") {
  std::map<FeatureGroup, int> counts;
  for (int i = 0; i < kObservationSize; ++i) counts[slot_group(i)]++;
  CHECK(counts[FeatureGroup::recv_rate] == 10);
  CHECK(counts[FeatureGroup::queue_delay] == 10);
  CHECK(counts[FeatureGroup::loss_ratio] == 10);
  CHECK(counts[FeatureGroup::avg_lost] == 10);
  CHECK(counts[FeatureGroup::media_type] == 24);
  CHECK_THROWS_AS(slot_group(64), ContractError);
  CHECK_THROWS_AS(slot_group(-1), ContractError);
}

TEST_CASE("features: windows are most-recent-first and zero-padded") {
  FeatureTracker tr;
  Observation empty = tr.observation();
  for (float v : empty.values) CHECK(v == 0.0f);

  // Two ticks at distinct rates: 1000 then 4000 kbps.
  std::vector<Packet> tick1 = {feat_packet(7500, MediaType::video, 5.0, false)};
  std::vector<Packet> tick2 = {feat_packet(30000, MediaType::video, 5.0, false)};
  tr.push_step(tick1, {});
  tr.push_step(tick2, {});
  Observation obs = tr.observation();
  CHECK(obs.values[0] == doctest::Approx(normalize_recv_rate(4000.0)).epsilon(1e-6));
  CHECK(obs.values[1] == doctest::Approx(normalize_recv_rate(1000.0)).epsilon(1e-6));
  CHECK(obs.values[2] == 0.0f);  // only two ticks so far
  for (float v : obs.values) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("features: long horizon merges ten ticks") {
  FeatureTracker tr;
  std::vector<Packet> tick = {feat_packet(7500, MediaType::video, 8.0, false)};
  for (int i = 0; i < 10; ++i) tr.push_step(tick, {});
  Observation obs = tr.observation();
  // First long slot (index kShortWindow) merges ten identical ticks.
  CHECK(obs.values[kShortWindow] == doctest::Approx(normalize_recv_rate(1000.0)).epsilon(1e-6));
  // Second long slot still empty.
  CHECK(obs.values[kShortWindow + 1] == 0.0f);
  for (int i = 0; i < 10; ++i) tr.push_step(tick, {});
  obs = tr.observation();
  CHECK(obs.values[kShortWindow + 1] == doctest::Approx(normalize_recv_rate(1000.0)).epsilon(1e-6));
}

TEST_CASE("features: masking zeroes exactly the masked group") {
  FeatureTracker tr;
  std::vector<Packet> tick = {feat_packet(7500, MediaType::video, 8.0, false),
                              feat_packet(200, MediaType::audio, 8.0, false)};
  std::vector<Packet> lost = {feat_packet(500, MediaType::video, 0.0, true)};
  // 52 ticks: enough to fill every slot of the five-merge long window.
  for (int i = 0; i < 52; ++i) tr.push_step(tick, lost);
  Observation full = tr.observation();
  Observation masked = tr.observation(mask_without(FeatureGroup::recv_rate));
  for (int i = 0; i < kObservationSize; ++i) {
    if (slot_group(i) == FeatureGroup::recv_rate) {
      CHECK(masked.values[i] == 0.0f);
      CHECK(full.values[i] > 0.0f);
    } else {
      CHECK(masked.values[i] == full.values[i]);
    }
  }
}

TEST_CASE("features: queue gradient tracks the last two ticks") {
  FeatureTracker tr;
  std::vector<Packet> t1 = {feat_packet(1000, MediaType::video, 10.0, false)};
  std::vector<Packet> t2 = {feat_packet(1000, MediaType::video, 34.0, false)};
  tr.push_step(t1, {});
  CHECK(tr.queue_gradient_ms_per_s() == 0.0);  // needs two ticks
  tr.push_step(t2, {});
  CHECK(tr.queue_gradient_ms_per_s() == doctest::Approx((34.0 - 10.0) / 0.06));
}

TEST_CASE("features: group names round-trip") {
  for (int g = 0; g < kFeatureGroupCount; ++g) {
    const auto group = static_cast<FeatureGroup>(g);
    CHECK(feature_group_from_string(to_string(group)) == group);
  }
  CHECK_THROWS_AS(feature_group_from_string("bogus"), ConfigError);
}
