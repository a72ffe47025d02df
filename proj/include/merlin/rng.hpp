#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace merlin {

uint64_t splitmix64(uint64_t x);

// Derives an independent stream seed from a base seed and a stream index.
uint64_t derive_seed(uint64_t base, uint64_t stream);

// Deterministic RNG wrapper. All draws go through explicit helpers instead of
// std distributions so that results are identical on every platform and
// standard library.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

  uint64_t next_u64() { return engine_(); }

  // [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive on both ends.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(uniform() * static_cast<double>(hi - lo + 1));
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller; caches the second deviate.
  double normal(double mean = 0.0, double stddev = 1.0);

  // Fisher-Yates through uniform_int, so the permutation is identical on
  // every platform (std::shuffle is not).
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i - 1)));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Independent stream derived from the construction seed; unaffected by
  // draws made on this instance.
  Rng fork(uint64_t stream) const { return Rng(derive_seed(seed_, stream)); }

  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  std::mt19937_64 engine_;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace merlin
