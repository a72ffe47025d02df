#include "merlin/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "merlin/action_codec.hpp"
#include "merlin/errors.hpp"
#include "merlin/media.hpp"
#include "merlin/parallel.hpp"
#include "merlin/util.hpp"

namespace merlin {
namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5*log(2*pi)
// An update stops optimizing once its batch KL passes this multiple of the
// target; the divergence abort sits at 10x.
constexpr double kKlBrake = 4.0;

// Seed streams hanging off cfg.seed.
constexpr uint64_t kTraceStream = 5000;
constexpr uint64_t kMediaStream = 6000;
constexpr uint64_t kEpisodeStream = 7000;
constexpr uint64_t kValueStream = 7777;
constexpr uint64_t kScratchStream = 8888;

double gaussian_logp(double u, double mu, double sigma) {
  const double z = (u - mu) / sigma;
  return -0.5 * z * z - std::log(sigma) - kHalfLog2Pi;
}

// KL(N(mu_old, s_old) || N(mu_new, s_new)) for scalars.
double gaussian_kl(double mu_old, double s_old, double mu_new, double s_new) {
  const double d = mu_old - mu_new;
  return std::log(s_new / s_old) +
         (s_old * s_old + d * d) / (2.0 * s_new * s_new) - 0.5;
}

// Samples around the policy mean; keeps the unclamped draws so the update
// phase can evaluate their exact log-probabilities.
class RolloutPolicy final : public Estimator {
 public:
  RolloutPolicy(const PolicyParams& params, double log_std)
      : params_(&params), runner_(params), sigma_(std::exp(log_std)) {}

  void reset(uint64_t episode_seed) override {
    runner_.reset();
    rng_ = Rng(episode_seed);
    raw_.clear();
  }

  double estimate_kbps(const Observation& obs, const StepContext&) override {
    const double mu = static_cast<double>(runner_.step(obs));
    const double u = mu + sigma_ * rng_.normal();
    raw_.push_back(u);
    return decode_action(std::clamp(u, 0.0, 1.0));
  }

  std::unique_ptr<Estimator> clone() const override {
    return std::make_unique<RolloutPolicy>(*params_, std::log(sigma_));
  }

  const std::vector<double>& raw() const { return raw_; }

 private:
  const PolicyParams* params_;
  PolicyRunner runner_;
  double sigma_;
  Rng rng_{0};
  std::vector<double> raw_;
};

// Chunked teacher-forced forward over arbitrary many sequences; partition is
// fixed by index so any jobs value produces the same floats.
std::vector<std::vector<float>> forward_means(
    const PolicyParams& params, const std::vector<std::span<const TrajectoryStep>>& seqs,
    int jobs) {
  const int n = static_cast<int>(seqs.size());
  std::vector<std::vector<float>> mus(static_cast<size_t>(n));
  const int chunks = (n + SequenceBatch::kChunkSize - 1) / SequenceBatch::kChunkSize;
  parallel_for(chunks, jobs, [&](int c) {
    const int begin = c * SequenceBatch::kChunkSize;
    const int end = std::min(begin + SequenceBatch::kChunkSize, n);
    std::vector<std::span<const TrajectoryStep>> part(
        seqs.begin() + begin, seqs.begin() + end);
    SequenceBatch batch(params, part);
    batch.forward();
    for (int i = begin; i < end; ++i) {
      mus[static_cast<size_t>(i)] = batch.actions()[static_cast<size_t>(i - begin)];
    }
  });
  return mus;
}

// Per-sequence data the surrogate needs at every step.
struct UpdateData {
  std::vector<std::vector<double>> u;         // raw Gaussian draws
  std::vector<std::vector<double>> adv;       // normalized advantages
  std::vector<std::vector<double>> mu_old;    // means at rollout parameters
  std::vector<std::vector<double>> logp_old;  // log pi_old(u)
};

struct GradOut {
  double dlogsigma = 0.0;
  double kl_sum = 0.0;
};

// One optimization pass: forward, build dL/dmu per step from the KL-penalized
// surrogate, backpropagate. Chunk-local work plus an ordered reduction keeps
// the result independent of jobs.
GradOut ppo_grad(const PolicyParams& params,
                 const std::vector<std::span<const TrajectoryStep>>& seqs,
                 const UpdateData& data, double sigma, double sigma_old, double beta,
                 int64_t total_steps, int jobs, std::vector<float>& grad) {
  const int n = static_cast<int>(seqs.size());
  const int chunks = (n + SequenceBatch::kChunkSize - 1) / SequenceBatch::kChunkSize;
  const double inv_n = 1.0 / static_cast<double>(total_steps);
  const double sig2 = sigma * sigma;
  std::vector<std::vector<float>> chunk_grad(static_cast<size_t>(chunks));
  std::vector<GradOut> chunk_out(static_cast<size_t>(chunks));

  parallel_for(chunks, jobs, [&](int c) {
    const int begin = c * SequenceBatch::kChunkSize;
    const int end = std::min(begin + SequenceBatch::kChunkSize, n);
    std::vector<std::span<const TrajectoryStep>> part(
        seqs.begin() + begin, seqs.begin() + end);
    SequenceBatch batch(params, part);
    batch.forward();
    std::vector<std::vector<float>> dlda(part.size());
    GradOut out;
    for (int i = begin; i < end; ++i) {
      const size_t s = static_cast<size_t>(i - begin);
      const size_t len = seqs[static_cast<size_t>(i)].size();
      dlda[s].resize(len);
      for (size_t t = 0; t < len; ++t) {
        const double mu = static_cast<double>(batch.actions()[s][t]);
        const double u = data.u[static_cast<size_t>(i)][t];
        const double adv = data.adv[static_cast<size_t>(i)][t];
        const double mu_old = data.mu_old[static_cast<size_t>(i)][t];
        const double logp_old = data.logp_old[static_cast<size_t>(i)][t];
        const double logp = gaussian_logp(u, mu, sigma);
        const double ratio = std::exp(std::clamp(logp - logp_old, -20.0, 20.0));
        const double dmu_diff = mu - mu_old;
        // d surrogate / d mu and the KL-penalty pullback toward mu_old.
        const double dl_dmu =
            -inv_n * adv * ratio * (u - mu) / sig2 + beta * inv_n * dmu_diff / sig2;
        dlda[s][t] = static_cast<float>(dl_dmu);
        const double z2 = (u - mu) * (u - mu) / sig2;
        out.dlogsigma += -inv_n * adv * ratio * (z2 - 1.0) +
                         beta * inv_n *
                             (1.0 - (sigma_old * sigma_old + dmu_diff * dmu_diff) / sig2);
        out.kl_sum += gaussian_kl(mu_old, sigma_old, mu, sigma);
      }
    }
    chunk_grad[static_cast<size_t>(c)].assign(grad.size(), 0.0f);
    batch.backward(dlda, chunk_grad[static_cast<size_t>(c)]);
    chunk_out[static_cast<size_t>(c)] = out;
  });

  GradOut total;
  for (int c = 0; c < chunks; ++c) {
    const auto& g = chunk_grad[static_cast<size_t>(c)];
    for (size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
    total.dlogsigma += chunk_out[static_cast<size_t>(c)].dlogsigma;
    total.kl_sum += chunk_out[static_cast<size_t>(c)].kl_sum;
  }
  return total;
}

struct ScalarAdam {
  double lr, m = 0.0, v = 0.0;
  int64_t t = 0;
  void step(double& param, double g) {
    ++t;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1.0 - std::pow(0.9, static_cast<double>(t)));
    const double vh = v / (1.0 - std::pow(0.999, static_cast<double>(t)));
    param -= lr * mh / (std::sqrt(vh) + 1e-8);
  }
};

PpoResult run_ppo(PolicyParams params, const PpoEnv& env, const PpoConfig& cfg) {
  if (cfg.gamma <= 0.0 || cfg.gamma > 1.0 || cfg.lambda <= 0.0 || cfg.lambda > 1.0) {
    throw ConfigError("gamma and lambda must lie in (0, 1]");
  }
  if (cfg.total_episodes < 0) throw ConfigError("total_episodes must be >= 0");
  if (cfg.episodes_per_update < 1) throw ConfigError("episodes_per_update must be >= 1");
  if (cfg.opt_epochs < 1) throw ConfigError("opt_epochs must be >= 1");
  if (cfg.kl_target <= 0.0) throw ConfigError("kl_target must be positive");
  if (env.stable_kbps == 0.0 && env.profile_mix.empty()) {
    throw ConfigError("profile mix is empty");
  }

  double log_std = cfg.init_log_std;
  double beta = cfg.initial_kl_penalty;
  ValueNet value(params.shape().input, 64, derive_seed(cfg.seed, kValueStream));
  Adam opt(params.count(), cfg.lr);
  ScalarAdam log_std_opt{cfg.log_std_lr};
  std::vector<float> grad(static_cast<size_t>(params.count()), 0.0f);

  PpoResult result{params, {}, log_std};
  int episode_index = 0;
  int update_index = 0;
  while (episode_index < cfg.total_episodes) {
    const int batch =
        std::min(cfg.episodes_per_update, cfg.total_episodes - episode_index);
    const double sigma_old = std::exp(log_std);

    std::vector<Trajectory> trajs(static_cast<size_t>(batch));
    std::vector<std::vector<double>> raws(static_cast<size_t>(batch));
    std::vector<EpisodeMetrics> metrics(static_cast<size_t>(batch));
    parallel_for(batch, cfg.jobs, [&](int i) {
      const uint64_t e = static_cast<uint64_t>(episode_index + i);
      const NetworkTrace trace =
          make_env_trace(env, episode_index + i, derive_seed(cfg.seed, kTraceStream + e));
      const MediaConfig media = sample_call_config(derive_seed(cfg.seed, kMediaStream + e));
      RolloutPolicy actor(params, log_std);
      EpisodeOptions opts;
      opts.mask = cfg.mask;
      opts.reward_weights = cfg.reward_weights;
      auto [traj, m] =
          run_episode(trace, media, actor, derive_seed(cfg.seed, kEpisodeStream + e), opts);
      if (actor.raw().size() != traj.steps.size()) {
        throw ContractError("rollout sample log out of sync with trajectory");
      }
      trajs[static_cast<size_t>(i)] = std::move(traj);
      raws[static_cast<size_t>(i)] = actor.raw();
      metrics[static_cast<size_t>(i)] = m;
    });

    // Flatten states for the value net; episode order then time order.
    int64_t total_steps = 0;
    for (const Trajectory& t : trajs) total_steps += static_cast<int64_t>(t.steps.size());
    if (total_steps == 0) throw ContractError("rollout produced no steps");
    Eigen::MatrixXf states(params.shape().input, total_steps);
    {
      int64_t col = 0;
      for (const Trajectory& t : trajs) {
        for (const TrajectoryStep& step : t.steps) {
          states.col(col++) = Eigen::Map<const Eigen::VectorXf>(step.obs.values.data(),
                                                                params.shape().input);
        }
      }
    }
    const Eigen::VectorXf state_values = value.values(states);

    // GAE per episode, then one normalization over the whole update.
    UpdateData data;
    data.u = std::move(raws);
    data.adv.resize(static_cast<size_t>(batch));
    std::vector<std::vector<double>> returns(static_cast<size_t>(batch));
    {
      int64_t col = 0;
      for (int i = 0; i < batch; ++i) {
        const auto& steps = trajs[static_cast<size_t>(i)].steps;
        std::vector<double> rewards(steps.size()), values_ep(steps.size());
        for (size_t t = 0; t < steps.size(); ++t) {
          const double r = steps[t].reward.total;
          if (!std::isfinite(r)) throw NumericalError("non-finite reward in rollout");
          rewards[t] = r;
          values_ep[t] = static_cast<double>(state_values(col + static_cast<int64_t>(t)));
        }
        data.adv[static_cast<size_t>(i)] =
            gae_advantages(rewards, values_ep, cfg.gamma, cfg.lambda);
        returns[static_cast<size_t>(i)].resize(steps.size());
        for (size_t t = 0; t < steps.size(); ++t) {
          returns[static_cast<size_t>(i)][t] =
              data.adv[static_cast<size_t>(i)][t] + values_ep[t];
        }
        col += static_cast<int64_t>(steps.size());
      }
    }
    {
      double sum = 0.0, sq = 0.0;
      for (const auto& ep : data.adv) {
        for (double a : ep) {
          sum += a;
          sq += a * a;
        }
      }
      const double mean = sum / static_cast<double>(total_steps);
      const double var = std::max(sq / static_cast<double>(total_steps) - mean * mean, 0.0);
      const double scale = 1.0 / (std::sqrt(var) + 1e-8);
      for (auto& ep : data.adv) {
        for (double& a : ep) a = (a - mean) * scale;
      }
    }

    std::vector<std::span<const TrajectoryStep>> seqs;
    seqs.reserve(static_cast<size_t>(batch));
    for (const Trajectory& t : trajs) seqs.emplace_back(t.steps.data(), t.steps.size());

    // Old-policy means and log-probabilities, from the same forward code the
    // gradient passes use.
    {
      const auto mus = forward_means(params, seqs, cfg.jobs);
      data.mu_old.resize(static_cast<size_t>(batch));
      data.logp_old.resize(static_cast<size_t>(batch));
      for (int i = 0; i < batch; ++i) {
        const size_t len = seqs[static_cast<size_t>(i)].size();
        data.mu_old[static_cast<size_t>(i)].resize(len);
        data.logp_old[static_cast<size_t>(i)].resize(len);
        for (size_t t = 0; t < len; ++t) {
          const double mu = static_cast<double>(mus[static_cast<size_t>(i)][t]);
          data.mu_old[static_cast<size_t>(i)][t] = mu;
          data.logp_old[static_cast<size_t>(i)][t] =
              gaussian_logp(data.u[static_cast<size_t>(i)][t], mu, sigma_old);
        }
      }
    }

    // Mean divergence of the current parameters from the rollout policy.
    auto mean_kl_now = [&]() {
      const auto mus = forward_means(params, seqs, cfg.jobs);
      const double sigma_new = std::exp(log_std);
      double kl = 0.0;
      for (int i = 0; i < batch; ++i) {
        for (size_t t = 0; t < seqs[static_cast<size_t>(i)].size(); ++t) {
          kl += gaussian_kl(data.mu_old[static_cast<size_t>(i)][t], sigma_old,
                            static_cast<double>(mus[static_cast<size_t>(i)][t]), sigma_new);
        }
      }
      return kl / static_cast<double>(total_steps);
    };

    // Optimization epochs with a KL brake: once the batch has moved past
    // kKlBrake times the target, more epochs only deepen an overshoot the
    // penalty would then have to walk back, so the update stops early. The
    // hard abort below is reserved for a single epoch jumping past 10x.
    double measured_kl = 0.0;
    for (int epoch = 0; epoch < cfg.opt_epochs; ++epoch) {
      std::fill(grad.begin(), grad.end(), 0.0f);
      const GradOut out = ppo_grad(params, seqs, data, std::exp(log_std), sigma_old,
                                   beta, total_steps, cfg.jobs, grad);
      if (!std::isfinite(out.dlogsigma) || !std::isfinite(global_norm(grad))) {
        throw NumericalError("non-finite policy gradient at update " +
                             std::to_string(update_index));
      }
      clip_global_norm(grad, cfg.clip_norm);
      opt.step(params.flat(), grad);
      log_std_opt.step(log_std, out.dlogsigma);
      measured_kl = mean_kl_now();
      if (measured_kl > kKlBrake * cfg.kl_target) break;
    }
    if (!std::isfinite(measured_kl) || measured_kl > 10.0 * cfg.kl_target) {
      throw NumericalError(
          "policy diverged: mean KL " + format_double(measured_kl) + " exceeds 10x target " +
          format_double(cfg.kl_target) + " at update " + std::to_string(update_index) +
          " (penalty " + format_double(beta) + ")");
    }
    beta = adapt_kl_penalty(beta, measured_kl, cfg.kl_target);

    // Value head on empirical returns.
    Eigen::VectorXf targets(total_steps);
    {
      int64_t col = 0;
      for (const auto& ep : returns) {
        for (double r : ep) targets(col++) = static_cast<float>(r);
      }
    }
    value.fit(states, targets, cfg.value_epochs, cfg.value_lr, cfg.value_loss_weight);

    for (int i = 0; i < batch; ++i) {
      RewardPoint p;
      p.episode = episode_index + i;
      p.mean_qoe = metrics[static_cast<size_t>(i)].mean_qoe;
      p.mean_kl = measured_kl;
      p.policy_std = sigma_old;
      result.curve.points.push_back(p);
    }
    if (cfg.verbose) {
      double qoe = 0.0;
      for (int i = 0; i < batch; ++i) qoe += metrics[static_cast<size_t>(i)].mean_qoe;
      std::fprintf(stderr, "update %d episodes %d..%d qoe %.4f kl %.5f beta %.4f std %.4f\n",
                   update_index, episode_index, episode_index + batch - 1,
                   qoe / batch, measured_kl, beta, std::exp(log_std));
    }
    episode_index += batch;
    ++update_index;
  }

  result.params = std::move(params);
  result.final_log_std = log_std;
  return result;
}

}  // namespace

NetworkTrace make_env_trace(const PpoEnv& env, int episode_index, uint64_t seed) {
  if (env.stable_kbps > 0.0) {
    return make_stable_trace(env.stable_kbps, env.duration_ms, seed);
  }
  const ProfileTag tag =
      env.profile_mix[static_cast<size_t>(episode_index) % env.profile_mix.size()];
  return generate_trace(tag, seed, env.duration_ms);
}

void save_reward_curve(const RewardCurve& curve, const std::string& path) {
  TextWriter out(path);
  out.write_line("episode,mean_qoe,mean_kl,policy_std");
  for (const RewardPoint& p : curve.points) {
    out.write_line(std::to_string(p.episode) + "," + format_double(p.mean_qoe) + "," +
                   format_double(p.mean_kl) + "," + format_double(p.policy_std));
  }
  out.close();
}

double adapt_kl_penalty(double beta, double measured_kl, double target) {
  if (target <= 0.0) throw ConfigError("kl target must be positive");
  if (measured_kl > 1.5 * target) beta *= 2.0;
  else if (measured_kl < target / 1.5) beta *= 0.5;
  return std::clamp(beta, 1e-4, 1e4);
}

std::vector<double> gae_advantages(std::span<const double> rewards,
                                   std::span<const double> values, double gamma,
                                   double lambda) {
  if (rewards.size() != values.size()) {
    throw ContractError("rewards and values must be the same length");
  }
  std::vector<double> adv(rewards.size(), 0.0);
  double carry = 0.0;
  for (int64_t t = static_cast<int64_t>(rewards.size()) - 1; t >= 0; --t) {
    const double next_value =
        t + 1 < static_cast<int64_t>(values.size()) ? values[static_cast<size_t>(t + 1)] : 0.0;
    const double delta =
        rewards[static_cast<size_t>(t)] + gamma * next_value - values[static_cast<size_t>(t)];
    carry = delta + gamma * lambda * carry;
    adv[static_cast<size_t>(t)] = carry;
  }
  return adv;
}

ValueNet::ValueNet(int input, int hidden, uint64_t seed)
    : input_(input), hidden_(hidden) {
  Rng rng(seed);
  const auto fill = [&](Eigen::MatrixXf& m, double k) {
    for (int c = 0; c < m.cols(); ++c) {
      for (int r = 0; r < m.rows(); ++r) {
        m(r, c) = static_cast<float>(rng.uniform(-k, k));
      }
    }
  };
  w1_ = Eigen::MatrixXf(hidden, input);
  fill(w1_, 1.0 / std::sqrt(static_cast<double>(input)));
  b1_ = Eigen::VectorXf::Zero(hidden);
  w2_ = Eigen::MatrixXf(1, hidden);
  fill(w2_, 1.0 / std::sqrt(static_cast<double>(hidden)));
  b2_ = Eigen::VectorXf::Zero(1);
  const size_t n = static_cast<size_t>(w1_.size() + b1_.size() + w2_.size() + b2_.size());
  m_.assign(n, 0.0f);
  v_.assign(n, 0.0f);
}

Eigen::VectorXf ValueNet::values(const Eigen::MatrixXf& obs) const {
  if (obs.rows() != input_) throw ContractError("value net input width mismatch");
  const Eigen::MatrixXf h = ((w1_ * obs).colwise() + b1_).cwiseMax(0.0f);
  return ((w2_ * h).row(0).array() + b2_(0)).transpose();
}

double ValueNet::fit(const Eigen::MatrixXf& obs, const Eigen::VectorXf& targets,
                     int steps, double lr, double grad_scale) {
  if (obs.cols() != targets.size()) throw ContractError("value fit size mismatch");
  const int64_t n = obs.cols();
  double loss = 0.0;
  for (int it = 0; it < steps; ++it) {
    const Eigen::MatrixXf pre = (w1_ * obs).colwise() + b1_;
    const Eigen::MatrixXf h = pre.cwiseMax(0.0f);
    const Eigen::RowVectorXf v = (w2_ * h).row(0).array() + b2_(0);
    const Eigen::RowVectorXf err = v - targets.transpose();
    loss = static_cast<double>(err.squaredNorm()) / static_cast<double>(n);
    if (!std::isfinite(loss)) throw NumericalError("value loss diverged");
    const Eigen::RowVectorXf d =
        err * static_cast<float>(2.0 * grad_scale / static_cast<double>(n));
    const Eigen::MatrixXf gw2 = d * h.transpose();
    const float gb2 = d.sum();
    Eigen::MatrixXf dh = w2_.transpose() * d;
    dh.array() *= (pre.array() > 0.0f).cast<float>();
    const Eigen::MatrixXf gw1 = dh * obs.transpose();
    const Eigen::VectorXf gb1 = dh.rowwise().sum();

    ++t_;
    const double bc1 = 1.0 - std::pow(0.9, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(0.999, static_cast<double>(t_));
    size_t off = 0;
    const auto update = [&](float* p, const float* g, int64_t count) {
      for (int64_t i = 0; i < count; ++i, ++off) {
        const double gi = static_cast<double>(g[i]);
        const double m = 0.9 * static_cast<double>(m_[off]) + 0.1 * gi;
        const double vv = 0.999 * static_cast<double>(v_[off]) + 0.001 * gi * gi;
        m_[off] = static_cast<float>(m);
        v_[off] = static_cast<float>(vv);
        p[i] = static_cast<float>(static_cast<double>(p[i]) -
                                  lr * (m / bc1) / (std::sqrt(vv / bc2) + 1e-8));
      }
    };
    update(w1_.data(), gw1.data(), w1_.size());
    update(b1_.data(), gb1.data(), b1_.size());
    update(w2_.data(), gw2.data(), w2_.size());
    update(b2_.data(), &gb2, 1);
  }
  return loss;
}

PpoResult finetune(const PolicyParams& params, const PpoEnv& env, const PpoConfig& cfg) {
  return run_ppo(params, env, cfg);
}

PpoResult train_from_scratch(const PolicyShape& shape, const PpoEnv& env,
                             const PpoConfig& cfg) {
  return run_ppo(PolicyParams::init(shape, derive_seed(cfg.seed, kScratchStream)), env,
                 cfg);
}

}  // namespace merlin
