#pragma once

#include <vector>

namespace dtr {

// Thread control.  set_threads(0) keeps the OpenMP default.  Serial builds
// (no OpenMP) run everything on one thread; the API still works.
void set_threads(int n);
int max_threads();

// Fixed block size for deterministic parallel reductions: work is cut into
// blocks of kReductionBlock items, each block is accumulated sequentially,
// and block partials are combined in block order.  The result is therefore
// independent of the number of threads (bit-for-bit).
inline constexpr int kReductionBlock = 64;

inline int num_blocks(int n) {
  return (n + kReductionBlock - 1) / kReductionBlock;
}

// Runs fn(block_index, begin, end) over the block decomposition of [0, n),
// in parallel when OpenMP is enabled and the caller is not already inside a
// parallel region.
template <typename Fn>
void for_blocks(int n, Fn&& fn);

// Runs fn(i) for i in [0, n) in parallel (no reduction; per-item output).
template <typename Fn>
void parallel_for(int n, Fn&& fn);

}  // namespace dtr

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dtr {

template <typename Fn>
void for_blocks(int n, Fn&& fn) {
  const int nb = num_blocks(n);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int b = 0; b < nb; ++b) {
    const int begin = b * kReductionBlock;
    const int end = begin + kReductionBlock < n ? begin + kReductionBlock : n;
    fn(b, begin, end);
  }
}

template <typename Fn>
void parallel_for(int n, Fn&& fn) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int i = 0; i < n; ++i) fn(i);
}

}  // namespace dtr
