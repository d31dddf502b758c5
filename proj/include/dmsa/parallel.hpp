#ifndef DMSA_PARALLEL_HPP
#define DMSA_PARALLEL_HPP

#include <algorithm>
#include <functional>
#include <thread>
#include <vector>

#include "dmsa/tensor.hpp"

namespace dmsa {

// Library-wide worker count for data-parallel kernels. Defaults to 1.
void set_num_threads(int n);
int num_threads();

/// Runs body(i) for every i in [0, n). Iterations must write disjoint
/// outputs; each index is processed exactly once by one thread, so results
/// do not depend on the thread count.
template <typename Body>
void parallel_for(Index n, Body&& body) {
  const int workers = static_cast<int>(std::min<Index>(num_threads(), n));
  if (workers <= 1) {
    for (Index i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  const Index chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const Index begin = w * chunk;
    const Index end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([begin, end, &body] {
      for (Index i = begin; i < end; ++i) body(i);
    });
  }
}

}  // namespace dmsa

#endif  // DMSA_PARALLEL_HPP
