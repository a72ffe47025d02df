#include "merlin/demo.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "merlin/action_codec.hpp"
#include "merlin/errors.hpp"
#include "merlin/parallel.hpp"
#include "merlin/ukf.hpp"
#include "merlin/util.hpp"

namespace merlin {
namespace {

using ordered_json = nlohmann::ordered_json;

// Per-entry seed streams derived from the manifest base seed; entry i uses
// streams 4i+1..4i+3 so appended entries continue the sequence.
DemoEntry make_entry(const std::vector<ProfileTag>& mix, uint64_t base_seed, size_t index) {
  DemoEntry e;
  e.profile = mix[index % mix.size()];
  const uint64_t s = static_cast<uint64_t>(index) * 4;
  e.trace_seed = derive_seed(base_seed, s + 1);
  e.episode_seed = derive_seed(base_seed, s + 2);
  e.call_seed = derive_seed(base_seed, s + 3);
  return e;
}

Trajectory run_entry(const DemoEntry& entry, int64_t duration_ms, Estimator& actor,
                     Estimator* shadow) {
  const NetworkTrace trace = generate_trace(entry.profile, entry.trace_seed, duration_ms);
  const MediaConfig cfg = sample_call_config(entry.call_seed);
  EpisodeOptions opts;
  opts.shadow = shadow;
  return run_episode(trace, cfg, actor, entry.episode_seed, opts).first;
}

void append_step_line(std::string& out, size_t traj, size_t t, const TrajectoryStep& step,
                      const float* shadow_kbps) {
  out += "{\"traj\":";
  out += std::to_string(traj);
  out += ",\"t\":";
  out += std::to_string(t);
  out += ",\"obs\":[";
  for (int i = 0; i < kObservationSize; ++i) {
    if (i) out += ',';
    out += format_float(step.obs.values[static_cast<size_t>(i)]);
  }
  out += "],\"a\":";
  out += format_float(step.action_norm);
  out += ",\"kbps\":";
  out += format_float(step.action_kbps);
  out += ",\"r\":[";
  out += format_double(step.reward.total);
  out += ',';
  out += format_double(step.reward.rate_util);
  out += ',';
  out += format_double(step.reward.delay_penalty);
  out += ',';
  out += format_double(step.reward.loss_penalty);
  out += ']';
  if (shadow_kbps) {
    out += ",\"shadow\":";
    out += format_float(*shadow_kbps);
  }
  out += "}\n";
}

}  // namespace

DemoSet collect(const CollectConfig& cfg) {
  if (cfg.n < 1) throw ConfigError("collect needs n >= 1");
  if (cfg.profile_mix.empty()) throw ConfigError("collect needs a non-empty profile mix");
  if (cfg.duration_ms < 1000) throw ConfigError("collect needs duration_ms >= 1000");

  DemoSet set;
  set.manifest.version = kVersion;
  set.manifest.base_seed = cfg.seed;
  set.manifest.duration_ms = cfg.duration_ms;
  set.manifest.profile_mix = cfg.profile_mix;
  for (size_t i = 0; i < static_cast<size_t>(cfg.n); ++i) {
    set.manifest.entries.push_back(make_entry(cfg.profile_mix, cfg.seed, i));
  }
  set.trajectories.resize(static_cast<size_t>(cfg.n));
  parallel_for(cfg.n, cfg.jobs, [&](int i) {
    UkfEstimator expert;
    try {
      set.trajectories[static_cast<size_t>(i)] = run_entry(
          set.manifest.entries[static_cast<size_t>(i)], cfg.duration_ms, expert, nullptr);
    } catch (const Error& e) {
      throw EstimatorFault("episode " + std::to_string(i) + ": " + e.what());
    }
  });
  return set;
}

DemoSet regenerate(const DemoManifest& manifest, int jobs) {
  for (const DemoEntry& e : manifest.entries) {
    if (e.source != "expert") {
      throw ContractError(
          "manifest contains relabeled entries; regeneration needs the learner policy");
    }
  }
  DemoSet set;
  set.manifest = manifest;
  set.trajectories.resize(manifest.entries.size());
  parallel_for(static_cast<int>(manifest.entries.size()), jobs, [&](int i) {
    UkfEstimator expert;
    set.trajectories[static_cast<size_t>(i)] =
        run_entry(manifest.entries[static_cast<size_t>(i)], manifest.duration_ms, expert,
                  nullptr);
  });
  return set;
}

void save_demos(const DemoSet& set, const std::string& path) {
  if (set.manifest.entries.size() != set.trajectories.size()) {
    throw ContractError("demo manifest entry count does not match trajectory count");
  }
  ordered_json manifest;
  manifest["version"] = set.manifest.version.empty() ? kVersion : set.manifest.version;
  manifest["kind"] = "demoset";
  manifest["base_seed"] = set.manifest.base_seed;
  manifest["duration"] = set.manifest.duration_ms;
  ordered_json profiles = ordered_json::array();
  for (ProfileTag p : set.manifest.profile_mix) profiles.push_back(to_string(p));
  manifest["profiles"] = profiles;
  manifest["n"] = set.manifest.entries.size();
  ordered_json entries = ordered_json::array();
  for (const DemoEntry& e : set.manifest.entries) {
    ordered_json je;
    je["profile"] = to_string(e.profile);
    je["trace_seed"] = e.trace_seed;
    je["episode_seed"] = e.episode_seed;
    je["call_seed"] = e.call_seed;
    je["source"] = e.source;
    entries.push_back(je);
  }
  manifest["entries"] = entries;

  TextWriter out(path);
  out.write_line(manifest.dump());
  std::string buf;
  for (size_t i = 0; i < set.trajectories.size(); ++i) {
    const Trajectory& traj = set.trajectories[i];
    const bool has_shadow = !traj.shadow_kbps.empty();
    if (has_shadow && traj.shadow_kbps.size() != traj.steps.size()) {
      throw ContractError("trajectory shadow labels do not cover every step");
    }
    buf.clear();
    for (size_t t = 0; t < traj.steps.size(); ++t) {
      append_step_line(buf, i, t, traj.steps[t], has_shadow ? &traj.shadow_kbps[t] : nullptr);
    }
    out.write(buf);
  }
  out.close();
}

DemoSet load_demos(const std::string& path) {
  TextReader in(path);
  auto fail = [&](const std::string& what) -> DataError {
    return DataError("demo file " + path + ": line " + std::to_string(in.line_number()) +
                     " (byte " + std::to_string(in.line_offset()) + "): " + what);
  };
  std::string line;
  if (!in.next_line(line) || in.truncated_last_line()) {
    throw DataError("demo file " + path + ": truncated at byte " + std::to_string(in.offset()));
  }
  DemoSet set;
  try {
    const ordered_json manifest = ordered_json::parse(line);
    const std::string version = manifest.at("version").get<std::string>();
    if (version != kVersion) {
      throw DataError("demo file " + path + ": version mismatch: file written by " + version +
                      ", this build reads " + kVersion);
    }
    if (manifest.value("kind", "") != "demoset") throw fail("not a demo set file");
    set.manifest.version = version;
    set.manifest.base_seed = manifest.at("base_seed").get<uint64_t>();
    set.manifest.duration_ms = manifest.at("duration").get<int64_t>();
    for (const auto& p : manifest.at("profiles")) {
      set.manifest.profile_mix.push_back(profile_from_string(p.get<std::string>()));
    }
    for (const auto& je : manifest.at("entries")) {
      DemoEntry e;
      e.profile = profile_from_string(je.at("profile").get<std::string>());
      e.trace_seed = je.at("trace_seed").get<uint64_t>();
      e.episode_seed = je.at("episode_seed").get<uint64_t>();
      e.call_seed = je.at("call_seed").get<uint64_t>();
      e.source = je.value("source", "expert");
      set.manifest.entries.push_back(e);
    }
    if (manifest.at("n").get<size_t>() != set.manifest.entries.size()) {
      throw fail("manifest n does not match its entry list");
    }
  } catch (const DataError&) {
    throw;
  } catch (const std::exception& e) {
    throw fail(std::string("malformed manifest: ") + e.what());
  }

  set.trajectories.resize(set.manifest.entries.size());
  for (size_t i = 0; i < set.trajectories.size(); ++i) {
    const DemoEntry& e = set.manifest.entries[i];
    Trajectory& traj = set.trajectories[i];
    traj.profile = e.profile;
    traj.trace_seed = e.trace_seed;
    traj.episode_seed = e.episode_seed;
    traj.duration_ms = set.manifest.duration_ms;
    const MediaConfig cfg = sample_call_config(e.call_seed);
    traj.call_kind = cfg.call_kind;
    traj.video_start_ms = cfg.video_start_ms;
  }

  int64_t expect_traj = 0, expect_t = 0;
  while (in.next_line(line)) {
    if (in.truncated_last_line()) break;
    try {
      const ordered_json js = ordered_json::parse(line);
      const int64_t traj_idx = js.at("traj").get<int64_t>();
      const int64_t t = js.at("t").get<int64_t>();
      if (traj_idx >= static_cast<int64_t>(set.trajectories.size())) {
        throw fail("step references trajectory " + std::to_string(traj_idx) +
                   " beyond manifest count");
      }
      if (traj_idx != expect_traj) {
        // Forward jumps leave the skipped trajectories empty, matching what
        // save emits for them.
        if (traj_idx < expect_traj) {
          throw fail("steps out of order: trajectory " + std::to_string(traj_idx) +
                     " after " + std::to_string(expect_traj));
        }
        expect_traj = traj_idx;
        expect_t = 0;
      }
      if (t != expect_t) {
        throw fail("step index " + std::to_string(t) + " where " +
                   std::to_string(expect_t) + " expected");
      }
      ++expect_t;
      TrajectoryStep step;
      const auto& obs = js.at("obs");
      if (obs.size() != kObservationSize) {
        throw fail("obs length " + std::to_string(obs.size()));
      }
      for (int k = 0; k < kObservationSize; ++k) {
        step.obs.values[static_cast<size_t>(k)] = obs[static_cast<size_t>(k)].get<float>();
      }
      step.action_norm = js.at("a").get<float>();
      step.action_kbps = js.at("kbps").get<float>();
      const auto& r = js.at("r");
      if (r.size() != 4) throw fail("reward component list must have 4 entries");
      step.reward.total = r[0].get<double>();
      step.reward.rate_util = r[1].get<double>();
      step.reward.delay_penalty = r[2].get<double>();
      step.reward.loss_penalty = r[3].get<double>();
      Trajectory& traj = set.trajectories[static_cast<size_t>(traj_idx)];
      traj.steps.push_back(step);
      if (js.contains("shadow")) {
        traj.shadow_kbps.push_back(js.at("shadow").get<float>());
      }
    } catch (const DataError&) {
      throw;
    } catch (const std::exception& e) {
      throw fail(std::string("malformed step record: ") + e.what());
    }
  }
  if (in.truncated_last_line()) {
    throw DataError("demo file " + path + ": truncated at byte " + std::to_string(in.offset()));
  }
  for (const Trajectory& traj : set.trajectories) {
    if (!traj.shadow_kbps.empty() && traj.shadow_kbps.size() != traj.steps.size()) {
      throw DataError("demo file " + path + ": shadow labels missing for some steps");
    }
  }
  return set;
}

DemoSet dagger_augment(const DemoSet& set, Estimator& learner, const Estimator& expert,
                       int n_rollouts, int jobs) {
  if (n_rollouts < 0) throw ConfigError("dagger_augment needs n_rollouts >= 0");
  DemoSet out = set;
  if (n_rollouts == 0) return out;
  const std::vector<ProfileTag> mix =
      set.manifest.profile_mix.empty()
          ? std::vector<ProfileTag>{ProfileTag::low_bw, ProfileTag::high_bw,
                                    ProfileTag::fluctuating_bw, ProfileTag::burst_loss,
                                    ProfileTag::lte}
          : set.manifest.profile_mix;
  const size_t base_count = set.manifest.entries.size();
  for (int j = 0; j < n_rollouts; ++j) {
    DemoEntry e = make_entry(mix, set.manifest.base_seed, base_count + static_cast<size_t>(j));
    e.source = "dagger";
    out.manifest.entries.push_back(e);
  }
  out.trajectories.resize(base_count + static_cast<size_t>(n_rollouts));
  parallel_for(n_rollouts, jobs, [&](int j) {
    const size_t idx = base_count + static_cast<size_t>(j);
    std::unique_ptr<Estimator> actor = learner.clone();
    std::unique_ptr<Estimator> labeler = expert.clone();
    Trajectory traj =
        run_entry(out.manifest.entries[idx], out.manifest.duration_ms, *actor, labeler.get());
    // Keep the visited states, swap in the expert's labels.
    for (size_t t = 0; t < traj.steps.size(); ++t) {
      const float kbps = traj.shadow_kbps[t];
      traj.steps[t].action_kbps = kbps;
      traj.steps[t].action_norm = static_cast<float>(encode_action(kbps));
    }
    traj.shadow_kbps.clear();
    out.trajectories[idx] = std::move(traj);
  });
  return out;
}

}  // namespace merlin
