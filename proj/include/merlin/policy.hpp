#pragma once

#include <cstddef>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "merlin/episode.hpp"

namespace merlin {

enum class ArchTag { lstm, mlp };

const char* to_string(ArchTag tag);
ArchTag arch_from_string(const std::string& name);  // throws ConfigError

struct PolicyShape {
  ArchTag arch = ArchTag::lstm;
  int input = kObservationSize;
  int hidden = 128;
  int fc_dim = 64;

  bool operator==(const PolicyShape&) const = default;
};

struct TensorSpec {
  std::string name;
  int rows = 0;
  int cols = 0;
  int64_t offset = 0;  // into the flat buffer, in floats
};

// Allocator pinning float buffers to 64-byte boundaries. Vectorized kernels
// split loops at alignment boundaries, so a buffer whose address varies from
// run to run can change accumulation order in the low bits; pinning the
// alignment keeps every run bit-identical.
template <class T>
struct AlignedAlloc {
  using value_type = T;
  static constexpr std::size_t kAlign = 64;
  AlignedAlloc() = default;
  template <class U>
  AlignedAlloc(const AlignedAlloc<U>&) noexcept {}
  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kAlign}));
  }
  void deallocate(T* p, std::size_t) noexcept {
    ::operator delete(p, std::align_val_t{kAlign});
  }
  template <class U>
  bool operator==(const AlignedAlloc<U>&) const noexcept { return true; }
};

using AlignedVec = std::vector<float, AlignedAlloc<float>>;

// All weights in one flat float buffer with a fixed tensor registry, so the
// optimizer, clipping, serialization, and derivative checks all see a single
// vector. Layout (column-major within each tensor):
//   lstm: w_x(4H x in), w_h(4H x H), b(4H x 1), then the decode head
//   mlp:  w_x(H x in),  b(H x 1),  then the decode head
//   head: fc1_w(D x H), fc1_b(D x 1), fc2_w(1 x D), fc2_b(1 x 1)
// Gate rows within a 4H block are ordered input, forget, cell, output.
class PolicyParams {
 public:
  explicit PolicyParams(const PolicyShape& shape);  // zero weights

  // U[-k, k] with k = 1/sqrt(fan_in) per weight matrix, zero biases except
  // the forget-gate rows which start at +1.
  static PolicyParams init(const PolicyShape& shape, uint64_t seed);

  const PolicyShape& shape() const { return shape_; }
  const std::vector<TensorSpec>& tensors() const { return tensors_; }
  int64_t count() const { return static_cast<int64_t>(flat_.size()); }
  AlignedVec& flat() { return flat_; }
  const AlignedVec& flat() const { return flat_; }

  Eigen::Map<Eigen::MatrixXf> tensor(std::string_view name);
  Eigen::Map<const Eigen::MatrixXf> tensor(std::string_view name) const;

 private:
  PolicyShape shape_;
  std::vector<TensorSpec> tensors_;
  AlignedVec flat_;
};

std::vector<TensorSpec> policy_tensor_layout(const PolicyShape& shape);

// Parameter file: one JSON header line (architecture, shapes, codec bounds,
// tensor table), then the flat buffer as raw little-endian 32-bit floats.
void save_params(const PolicyParams& params, const std::string& path);
PolicyParams load_params(const std::string& path);

// Single-step stateful forward pass for closed-loop rollouts. Hidden state
// persists across step() calls until reset().
class PolicyRunner {
 public:
  explicit PolicyRunner(const PolicyParams& params);  // params must outlive this

  void reset();
  float step(const Observation& obs);  // returns the sigmoid head output

 private:
  const PolicyParams* p_;
  Eigen::VectorXf h_, c_, z_, y_;
};

// Lockstep batched forward/backward over a chunk of sequences (padded to the
// longest; padding steps carry zero input and zero loss gradient, which keeps
// them out of every real gradient). Heavy lifting is Eigen GEMM on float.
// Training code partitions work into fixed kChunkSize chunks independent of
// the job count, so results are bitwise identical for any --jobs.
class SequenceBatch {
 public:
  static constexpr int kChunkSize = 8;

  SequenceBatch(const PolicyParams& params, std::vector<std::span<const TrajectoryStep>> seqs);

  void forward();
  // actions()[s][t], valid after forward().
  const std::vector<std::vector<float>>& actions() const { return actions_; }
  // dlda[s][t] = dL/d(action); accumulates into grad (size params.count()).
  void backward(const std::vector<std::vector<float>>& dlda, std::vector<float>& grad);

 private:
  const PolicyParams* p_;
  std::vector<std::span<const TrajectoryStep>> seqs_;
  int batch_ = 0;
  int t_max_ = 0;
  std::vector<Eigen::MatrixXf> xs_, gates_, cs_, tanh_cs_, hs_, pre1s_;
  std::vector<Eigen::RowVectorXf> as_;
  std::vector<std::vector<float>> actions_;
};

// Scalar double-precision implementation of the same network, written as
// plain loops. Slow on purpose: it exists to pin the fast path and to make
// derivative checks run in double.
class ReferenceNet {
 public:
  ReferenceNet(const PolicyShape& shape, std::vector<double> flat);
  static ReferenceNet from(const PolicyParams& params);

  const PolicyShape& shape() const { return shape_; }
  std::vector<double>& flat() { return flat_; }
  int64_t count() const { return static_cast<int64_t>(flat_.size()); }

  std::vector<double> forward(std::span<const TrajectoryStep> seq) const;
  // Gradient of sum_t dlda[t] * a_t with respect to every parameter.
  std::vector<double> backward(std::span<const TrajectoryStep> seq,
                               std::span<const double> dlda) const;

 private:
  double at(std::string_view name, int r, int c) const;

  PolicyShape shape_;
  std::vector<TensorSpec> tensors_;
  std::vector<double> flat_;
};

// Closed-loop estimator head: network output through the action codec.
// Optional Gaussian exploration around the mean for finetuning rollouts.
class PolicyEstimator final : public Estimator {
 public:
  explicit PolicyEstimator(std::shared_ptr<const PolicyParams> params);

  void set_exploration(double log_std);
  void clear_exploration();

  void reset(uint64_t episode_seed) override;
  double estimate_kbps(const Observation& obs, const StepContext& ctx) override;
  std::unique_ptr<Estimator> clone() const override;

  const PolicyParams& params() const { return *params_; }

 private:
  std::shared_ptr<const PolicyParams> params_;
  PolicyRunner runner_;
  bool explore_ = false;
  double log_std_ = 0.0;
  Rng rng_{0};
};

class Adam {
 public:
  Adam(int64_t n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(AlignedVec& params, const std::vector<float>& grad);
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<float> m_, v_;
};

double global_norm(const std::vector<float>& grad);
// Scales grad in place so its global norm is at most max_norm.
void clip_global_norm(std::vector<float>& grad, double max_norm);

}  // namespace merlin
