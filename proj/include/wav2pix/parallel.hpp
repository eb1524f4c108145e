#pragma once

#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace wav2pix {

inline int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

// Static partition of [0, n) into contiguous per-thread ranges. All batch
// parallelism in this project writes disjoint outputs and reduces partials in
// thread order, so results are bitwise reproducible for a fixed thread count.
template <typename Fn>
void parallel_for(int64_t n, Fn&& fn) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int64_t i = 0; i < n; ++i) fn(i);
}

}  // namespace wav2pix
