#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "merlin/episode.hpp"

namespace merlin {

// Provenance of one demonstration episode. source distinguishes expert
// collection rollouts from learner rollouts relabeled by the expert.
struct DemoEntry {
  ProfileTag profile = ProfileTag::high_bw;
  uint64_t trace_seed = 0;
  uint64_t episode_seed = 0;
  uint64_t call_seed = 0;
  std::string source = "expert";
};

struct DemoManifest {
  std::string version = "";  // filled from kVersion on collect/save
  uint64_t base_seed = 0;
  int64_t duration_ms = 60000;
  std::vector<ProfileTag> profile_mix;
  std::vector<DemoEntry> entries;
};

struct DemoSet {
  DemoManifest manifest;
  std::vector<Trajectory> trajectories;
};

struct CollectConfig {
  int n = 1;
  std::vector<ProfileTag> profile_mix = {ProfileTag::low_bw, ProfileTag::high_bw,
                                         ProfileTag::fluctuating_bw, ProfileTag::burst_loss,
                                         ProfileTag::lte};
  uint64_t seed = 1;
  int64_t duration_ms = 60000;
  int jobs = 1;
};

// Runs n expert (UKF) episodes over the cycled profile mix. Deterministic in
// cfg regardless of jobs.
DemoSet collect(const CollectConfig& cfg);

// Re-runs every manifest entry; the result matches the original set exactly.
// Refuses manifests containing relabeled entries, which need the learner
// policy that produced them.
DemoSet regenerate(const DemoManifest& manifest, int jobs = 1);

// JSON Lines: one manifest object, then one object per step
// {"traj":i,"t":k,"obs":[64],"a":norm,"kbps":v,"r":[components]}. A ".gz"
// suffix compresses. load(save(x)) == x bit for bit.
void save_demos(const DemoSet& set, const std::string& path);
DemoSet load_demos(const std::string& path);

// Rolls the learner out on fresh traces, relabels every visited state with
// the expert's action, and appends the relabeled trajectories.
DemoSet dagger_augment(const DemoSet& set, Estimator& learner, const Estimator& expert,
                       int n_rollouts, int jobs = 1);

}  // namespace merlin
