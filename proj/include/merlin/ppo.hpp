#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "merlin/policy.hpp"

namespace merlin {

// Environment a policy trains against online. stable_kbps > 0 pins every
// episode to a flat link at that rate; otherwise traces are generated from
// the profile mix, cycled per episode.
struct PpoEnv {
  double stable_kbps = 0.0;
  std::vector<ProfileTag> profile_mix = {ProfileTag::low_bw};
  int64_t duration_ms = 60000;
};

NetworkTrace make_env_trace(const PpoEnv& env, int episode_index, uint64_t seed);

struct PpoConfig {
  double initial_kl_penalty = 0.3;  // beta, adapted each update
  double kl_target = 0.01;
  int episodes_per_update = 5;
  int opt_epochs = 4;
  double gamma = 0.99;
  double lambda = 0.95;
  double lr = 3e-4;           // policy mean path
  double log_std_lr = 1e-2;   // exploration scale (scalar)
  double value_lr = 1e-2;
  double value_loss_weight = 0.5;  // scales the value-net gradient
  int value_epochs = 25;           // full-batch steps per update
  double init_log_std = -1.0;
  int total_episodes = 75;
  uint64_t seed = 0;
  double clip_norm = 5.0;
  FeatureMask mask = full_feature_mask();
  RewardWeights reward_weights;
  int jobs = 1;
  bool verbose = false;
};

struct RewardPoint {
  int episode = 0;
  double mean_qoe = 0.0;
  double mean_kl = 0.0;     // of the update that consumed this episode
  double policy_std = 0.0;  // at rollout time
};

struct RewardCurve {
  std::vector<RewardPoint> points;
};

// CSV: episode,mean_qoe,mean_kl,policy_std
void save_reward_curve(const RewardCurve& curve, const std::string& path);

// Doubles the penalty when the measured KL overshoots 1.5x the target and
// halves it below target/1.5; clamped to [1e-4, 1e4].
double adapt_kl_penalty(double beta, double measured_kl, double target);

// Generalized advantage estimation with a zero terminal bootstrap.
// values must be one entry per reward.
std::vector<double> gae_advantages(std::span<const double> rewards,
                                   std::span<const double> values, double gamma,
                                   double lambda);

// Small state-value head, separate from the policy network so attaching it
// cannot change the action path. Input is the raw 64-entry observation.
class ValueNet {
 public:
  ValueNet(int input, int hidden, uint64_t seed);

  // obs is input x n; returns one value per column.
  Eigen::VectorXf values(const Eigen::MatrixXf& obs) const;
  // Full-batch Adam steps on squared error; returns the final loss.
  double fit(const Eigen::MatrixXf& obs, const Eigen::VectorXf& targets, int steps,
             double lr, double grad_scale);

 private:
  int input_, hidden_;
  Eigen::MatrixXf w1_, w2_;
  Eigen::VectorXf b1_, b2_;
  std::vector<float> m_, v_;  // Adam moments over the packed parameter order
  int64_t t_ = 0;
};

struct PpoResult {
  PolicyParams params;
  RewardCurve curve;
  double final_log_std = 0.0;
};

// KL-penalized PPO with a Gaussian head over the normalized action: rollouts
// sample around the network mean with a learned global std, the surrogate
// ratio uses recomputed means so old and new log-probabilities share one code
// path, and the penalty coefficient adapts per update. Deterministic in
// (params, env, cfg) for any jobs value.
PpoResult finetune(const PolicyParams& params, const PpoEnv& env, const PpoConfig& cfg);

// Same machinery from randomly initialized parameters.
PpoResult train_from_scratch(const PolicyShape& shape, const PpoEnv& env,
                             const PpoConfig& cfg);

}  // namespace merlin
