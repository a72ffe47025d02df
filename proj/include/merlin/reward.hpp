#pragma once

#include <algorithm>

#include "merlin/action_codec.hpp"

namespace merlin {

struct RewardWeights {
  double rate = 0.6;
  double delay = 0.2;
  double loss = 0.2;
};

struct RewardComponents {
  double rate_util = 0.0;      // log-normalized receive rate, in [0,1]
  double delay_penalty = 0.0;  // min(delay/400 ms, 1)
  double loss_penalty = 0.0;   // loss ratio
  double total = 0.0;
};

// Per-step quality score r = w_rate*u - w_delay*d - w_loss*l with every
// component in [0,1], so r is bounded in [-(w_delay+w_loss), w_rate].
inline RewardComponents compute_reward(double recv_rate_kbps, double delay_ms,
                                       double loss_ratio, const RewardWeights& w = {}) {
  RewardComponents rc;
  rc.rate_util = encode_action(std::max(recv_rate_kbps, 0.0));
  rc.delay_penalty = std::clamp(delay_ms / 400.0, 0.0, 1.0);
  rc.loss_penalty = std::clamp(loss_ratio, 0.0, 1.0);
  rc.total = w.rate * rc.rate_util - w.delay * rc.delay_penalty - w.loss * rc.loss_penalty;
  return rc;
}

}  // namespace merlin
