#include "merlin/bc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "merlin/errors.hpp"
#include "merlin/parallel.hpp"
#include "merlin/util.hpp"

namespace merlin {
namespace {

// A view of the dataset after masking. When the mask is full we borrow the
// caller's trajectories; otherwise we hold masked copies.
struct MaskedData {
  std::vector<std::span<const TrajectoryStep>> seqs;
  std::vector<Trajectory> storage;
};

MaskedData mask_dataset(const DemoSet& demos, const FeatureMask& mask) {
  MaskedData data;
  const bool full = mask == full_feature_mask();
  if (!full) {
    data.storage.reserve(demos.trajectories.size());
    for (const Trajectory& traj : demos.trajectories) {
      Trajectory copy = traj;
      for (TrajectoryStep& step : copy.steps) apply_feature_mask(step.obs, mask);
      data.storage.push_back(std::move(copy));
    }
  }
  const std::vector<Trajectory>& source = full ? demos.trajectories : data.storage;
  data.seqs.reserve(source.size());
  for (const Trajectory& traj : source) {
    data.seqs.emplace_back(traj.steps.data(), traj.steps.size());
  }
  return data;
}

// Forward (and optionally backward) over the listed trajectories in fixed
// chunks. Returns the mean per-trajectory MSE; accumulates parameter
// gradients into grad when given. The chunk partition depends only on the
// order list, so results are identical for every jobs value.
double run_chunks(const PolicyParams& params,
                  const std::vector<std::span<const TrajectoryStep>>& seqs,
                  std::span<const int> order, int jobs, std::vector<float>* grad,
                  std::vector<double>* per_traj_mse) {
  const int n = static_cast<int>(order.size());
  if (n == 0) return 0.0;
  const int chunks = (n + SequenceBatch::kChunkSize - 1) / SequenceBatch::kChunkSize;
  std::vector<double> chunk_loss(static_cast<size_t>(chunks), 0.0);
  std::vector<std::vector<float>> chunk_grad;
  if (grad) chunk_grad.assign(static_cast<size_t>(chunks), {});
  std::vector<double> traj_mse(static_cast<size_t>(n), 0.0);

  parallel_for(chunks, jobs, [&](int c) {
    const int begin = c * SequenceBatch::kChunkSize;
    const int end = std::min(begin + SequenceBatch::kChunkSize, n);
    std::vector<std::span<const TrajectoryStep>> part;
    part.reserve(static_cast<size_t>(end - begin));
    for (int i = begin; i < end; ++i) {
      part.push_back(seqs[static_cast<size_t>(order[static_cast<size_t>(i)])]);
    }
    SequenceBatch batch(params, part);
    batch.forward();
    std::vector<std::vector<float>> dlda;
    if (grad) dlda.resize(part.size());
    double loss = 0.0;
    for (size_t s = 0; s < part.size(); ++s) {
      const auto& seq = part[s];
      const auto& acts = batch.actions()[s];
      if (grad) dlda[s].resize(seq.size());
      double mse = 0.0;
      for (size_t t = 0; t < seq.size(); ++t) {
        const double diff = static_cast<double>(acts[t]) -
                            static_cast<double>(seq[t].action_norm);
        mse += diff * diff;
        if (grad) {
          dlda[s][t] = static_cast<float>(2.0 * diff /
                                          (static_cast<double>(seq.size()) *
                                           static_cast<double>(n)));
        }
      }
      if (!seq.empty()) mse /= static_cast<double>(seq.size());
      traj_mse[static_cast<size_t>(begin) + s] = mse;
      loss += mse;
    }
    chunk_loss[static_cast<size_t>(c)] = loss;
    if (grad) {
      chunk_grad[static_cast<size_t>(c)].assign(static_cast<size_t>(params.count()), 0.0f);
      batch.backward(dlda, chunk_grad[static_cast<size_t>(c)]);
    }
  });

  if (grad) {
    for (const auto& g : chunk_grad) {
      for (size_t i = 0; i < g.size(); ++i) (*grad)[i] += g[i];
    }
  }
  if (per_traj_mse) {
    per_traj_mse->assign(traj_mse.begin(), traj_mse.end());
  }
  double total = 0.0;
  for (double l : chunk_loss) total += l;
  return total / static_cast<double>(n);
}

}  // namespace

void save_training_curve(const TrainingCurve& curve, const std::string& path) {
  TextWriter out(path);
  out.write_line("epoch,train_mse,holdout_mse");
  for (const TrainingPoint& p : curve.points) {
    out.write_line(std::to_string(p.epoch) + "," + format_double(p.train_mse) + "," +
                   format_double(p.holdout_mse));
  }
  out.close();
}

BcResult train_bc(const DemoSet& demos, const BcConfig& cfg, const PolicyParams* init) {
  if (demos.trajectories.empty()) throw ContractError("training set is empty");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (cfg.holdout_fraction < 0.0 || cfg.holdout_fraction >= 1.0) {
    throw ConfigError("holdout_fraction must lie in [0, 1)");
  }
  if (std::none_of(cfg.mask.begin(), cfg.mask.end(), [](bool b) { return b; })) {
    throw ConfigError("feature mask disables every group");
  }

  MaskedData data = mask_dataset(demos, cfg.mask);
  const int n = static_cast<int>(data.seqs.size());

  // Seeded split: shuffle once, last fraction becomes the holdout.
  std::vector<int> ids(static_cast<size_t>(n));
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng = Rng(cfg.seed).fork(4000);
  rng.shuffle(ids);
  int n_hold = static_cast<int>(std::floor(cfg.holdout_fraction * n));
  if (cfg.holdout_fraction > 0.0 && n >= 2) n_hold = std::max(n_hold, 1);
  const int n_train = n - n_hold;
  if (n_train < 1) throw ContractError("no trajectories left to train on");
  std::vector<int> train_ids(ids.begin(), ids.begin() + n_train);
  const std::vector<int> hold_ids(ids.begin() + n_train, ids.end());

  if (init && init->shape() != cfg.shape) {
    throw ContractError("resume parameters do not match the configured shape");
  }
  PolicyParams params = init ? *init : PolicyParams::init(cfg.shape, cfg.seed);
  Adam opt(params.count(), cfg.lr);
  std::vector<float> grad(static_cast<size_t>(params.count()), 0.0f);

  BcResult result{params, {}, std::numeric_limits<double>::infinity(), 0};
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(train_ids);
    double train_loss_sum = 0.0;
    for (int start = 0; start < n_train; start += cfg.batch_size) {
      const int count = std::min(cfg.batch_size, n_train - start);
      std::span<const int> batch_ids(train_ids.data() + start, static_cast<size_t>(count));
      std::fill(grad.begin(), grad.end(), 0.0f);
      const double loss =
          run_chunks(params, data.seqs, batch_ids, cfg.jobs, &grad, nullptr);
      if (!std::isfinite(loss)) {
        throw NumericalError("training loss diverged at epoch " + std::to_string(epoch));
      }
      train_loss_sum += loss * count;
      clip_global_norm(grad, cfg.clip_norm);
      opt.step(params.flat(), grad);
    }
    TrainingPoint point;
    point.epoch = epoch;
    point.train_mse = train_loss_sum / n_train;
    point.holdout_mse =
        hold_ids.empty()
            ? point.train_mse
            : run_chunks(params, data.seqs, hold_ids, cfg.jobs, nullptr, nullptr);
    result.curve.points.push_back(point);
    if (point.holdout_mse < result.best_holdout_mse) {
      result.best_holdout_mse = point.holdout_mse;
      result.best_epoch = epoch;
      result.params.flat() = params.flat();
    }
    if (cfg.verbose) {
      std::fprintf(stderr, "epoch %d train %.6f holdout %.6f\n", epoch,
                   point.train_mse, point.holdout_mse);
    }
    if (cfg.early_stop_mse > 0.0 && point.holdout_mse < cfg.early_stop_mse) break;
  }
  return result;
}

std::vector<double> evaluate_mse(const PolicyParams& params, const DemoSet& demos,
                                 const FeatureMask& mask, int jobs) {
  if (demos.trajectories.empty()) throw ContractError("evaluation set is empty");
  for (const Trajectory& traj : demos.trajectories) {
    for (const TrajectoryStep& step : traj.steps) {
      if (static_cast<int>(step.obs.values.size()) != params.shape().input) {
        throw ContractError("observation width does not match the network input");
      }
    }
  }
  MaskedData data = mask_dataset(demos, mask);
  std::vector<int> order(data.seqs.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> per_traj;
  run_chunks(params, data.seqs, order, jobs, nullptr, &per_traj);
  return per_traj;
}

void save_cdf(std::span<const double> values, const std::string& path) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  TextWriter out(path);
  out.write_line("value,cdf");
  for (size_t i = 0; i < sorted.size(); ++i) {
    out.write_line(format_double(sorted[i]) + "," +
                   format_double(static_cast<double>(i + 1) /
                                 static_cast<double>(sorted.size())));
  }
  out.close();
}

}  // namespace merlin
