#pragma once

#include <string>

#include "merlin/reward.hpp"
#include "merlin/ukf.hpp"

namespace merlin {

// Tunables shared across commands, overridable from a key=value text file
// ('#' comments, blank lines ignored). Keys use dotted names, e.g.
//   reward.rate = 0.6
//   ukf.q_bw = 4000
struct SystemConfig {
  RewardWeights reward;
  UkfConfig ukf;
};

// Applies one key/value pair; unknown keys and unparseable values throw
// ConfigError naming the key.
void apply_config_entry(SystemConfig& cfg, const std::string& key,
                        const std::string& value);

SystemConfig load_system_config(const std::string& path);

// Global seed resolution: explicit flag value wins; otherwise the MERLIN_SEED
// environment variable; otherwise the default.
uint64_t resolve_seed(const uint64_t* flag_value, uint64_t fallback);

}  // namespace merlin
