#pragma once

#include <functional>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace asr {

// Work is partitioned into a fixed number of blocks independent of the
// thread count; callers that reduce across blocks must do so in block
// order so results do not depend on scheduling.
constexpr int kParallelBlocks = 16;

template <typename Fn>
void parallel_blocks(int n, Fn&& fn) {
  if (n <= 0) return;
  const int blocks = n < kParallelBlocks ? n : kParallelBlocks;
  const int chunk = (n + blocks - 1) / blocks;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 1)
#endif
  for (int b = 0; b < blocks; ++b) {
    const int begin = b * chunk;
    const int end = begin + chunk < n ? begin + chunk : n;
    if (begin < end) fn(b, begin, end);
  }
}

}  // namespace asr
