#pragma once

#include <exception>
#include <mutex>
#include <omp.h>

namespace merlin {

// jobs <= 0 selects the OpenMP default thread count.
inline int resolve_jobs(int jobs) {
  if (jobs > 0) return jobs;
  return omp_get_max_threads();
}

// Runs fn(i) for i in [0, n). jobs == 1 is the serial reference path; any
// other value dispatches the same iteration space through OpenMP. Work items
// must be independent; partitioning never affects results because each index
// owns its output slot. If several iterations throw, the lowest index wins so
// the surfaced error does not depend on scheduling.
template <class F>
void parallel_for(int n, int jobs, F&& fn) {
  jobs = resolve_jobs(jobs);
  if (jobs == 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr first_error = nullptr;
  int first_error_index = n;
  std::mutex mu;
#pragma omp parallel for schedule(dynamic, 1) num_threads(jobs)
  for (int i = 0; i < n; ++i) {
    try {
      fn(i);
    } catch (...) {
      std::lock_guard<std::mutex> lock(mu);
      if (i < first_error_index) {
        first_error_index = i;
        first_error = std::current_exception();
      }
    }
  }
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace merlin
