#include "merlin/config.hpp"

#include <cstdlib>

#include "merlin/errors.hpp"
#include "merlin/util.hpp"

namespace merlin {
namespace {

std::string trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double num(const std::string& key, const std::string& value) {
  try {
    return parse_double(value, "config value");
  } catch (const DataError&) {
    throw ConfigError("config key " + key + ": cannot parse number from '" + value + "'");
  }
}

}  // namespace

void apply_config_entry(SystemConfig& cfg, const std::string& key,
                        const std::string& value) {
  if (key == "reward.rate") cfg.reward.rate = num(key, value);
  else if (key == "reward.delay") cfg.reward.delay = num(key, value);
  else if (key == "reward.loss") cfg.reward.loss = num(key, value);
  else if (key == "ukf.alpha") cfg.ukf.alpha = num(key, value);
  else if (key == "ukf.beta") cfg.ukf.beta = num(key, value);
  else if (key == "ukf.kappa") cfg.ukf.kappa = num(key, value);
  else if (key == "ukf.q_bw") cfg.ukf.q_bw = num(key, value);
  else if (key == "ukf.q_trend") cfg.ukf.q_trend = num(key, value);
  else if (key == "ukf.r_rate") cfg.ukf.r_rate = num(key, value);
  else if (key == "ukf.r_gradient") cfg.ukf.r_gradient = num(key, value);
  else if (key == "ukf.init_bw_kbps") cfg.ukf.init_bw_kbps = num(key, value);
  else if (key == "ukf.init_trend") cfg.ukf.init_trend = num(key, value);
  else if (key == "ukf.init_var_bw") cfg.ukf.init_var_bw = num(key, value);
  else if (key == "ukf.init_var_trend") cfg.ukf.init_var_trend = num(key, value);
  else if (key == "ukf.max_rel_step") cfg.ukf.max_rel_step = num(key, value);
  else if (key == "ukf.warmup_steps") cfg.ukf.warmup_steps = static_cast<int>(num(key, value));
  else throw ConfigError("unknown config key: " + key);
}

SystemConfig load_system_config(const std::string& path) {
  SystemConfig cfg;
  TextReader reader(path);
  std::string line;
  while (reader.next_line(line)) {
    const std::string text = trim(line);
    if (text.empty() || text[0] == '#') continue;
    const size_t eq = text.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config file " + path + " line " +
                        std::to_string(reader.line_number()) +
                        ": expected key = value");
    }
    apply_config_entry(cfg, trim(text.substr(0, eq)), trim(text.substr(eq + 1)));
  }
  return cfg;
}

uint64_t resolve_seed(const uint64_t* flag_value, uint64_t fallback) {
  if (flag_value) return *flag_value;
  if (const char* env = std::getenv("MERLIN_SEED")) {
    try {
      return static_cast<uint64_t>(parse_int(env, "MERLIN_SEED"));
    } catch (const DataError&) {
      throw ConfigError(std::string("MERLIN_SEED is not an integer: ") + env);
    }
  }
  return fallback;
}

}  // namespace merlin
