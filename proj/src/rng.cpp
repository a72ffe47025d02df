#include "merlin/rng.hpp"

#include <cmath>

namespace merlin {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t derive_seed(uint64_t base, uint64_t stream) {
  return splitmix64(base ^ splitmix64(stream + 0x9e3779b97f4a7c15ULL));
}

double Rng::normal(double mean, double stddev) {
  if (have_cached_) {
    have_cached_ = false;
    return mean + stddev * cached_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  cached_ = r * std::sin(theta);
  have_cached_ = true;
  return mean + stddev * r * std::cos(theta);
}

}  // namespace merlin
