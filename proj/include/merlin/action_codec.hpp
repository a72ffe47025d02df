#pragma once

#include <algorithm>
#include <cmath>

namespace merlin {

// Bandwidth actions live on a log scale between 10 kbps and 8 Mbps. The
// normalized action is the position of ln(rate) inside that interval, so 0
// maps to 10 kbps, 1 maps to 8000 kbps, and equal action steps multiply the
// rate by a constant factor.
inline constexpr double kMinRateKbps = 10.0;
inline constexpr double kMaxRateKbps = 8000.0;

inline double encode_action(double rate_kbps) {
  const double clamped = std::clamp(rate_kbps, kMinRateKbps, kMaxRateKbps);
  return (std::log(clamped) - std::log(kMinRateKbps)) /
         (std::log(kMaxRateKbps) - std::log(kMinRateKbps));
}

inline double decode_action(double action) {
  const double a = std::clamp(action, 0.0, 1.0);
  return std::exp(std::log(kMinRateKbps) +
                  a * (std::log(kMaxRateKbps) - std::log(kMinRateKbps)));
}

}  // namespace merlin
