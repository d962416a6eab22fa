#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <thread>
#include <type_traits>
#include <vector>

namespace dge {

/// Intra-op thread cap. DGE_THREADS=0 or unset means auto (hardware
/// concurrency). Read once per process.
inline int max_threads() {
  static const int cached = [] {
    const char* env = std::getenv("DGE_THREADS");
    long v = 0;
    if (env && *env) v = std::strtol(env, nullptr, 10);
    if (v <= 0) {
      unsigned hw = std::thread::hardware_concurrency();
      v = hw ? static_cast<long>(hw) : 1;
    }
    return static_cast<int>(std::min<long>(v, 64));
  }();
  return cached;
}

namespace detail {
constexpr int64_t kParallelWorkThreshold = 1 << 16;  // flops-ish units
}

/// Runs body(begin, end) over a partition of [0, n). Elements are independent
/// by contract; every element is computed with the same sequential inner
/// order regardless of the partition, so results are bitwise identical for
/// any thread count. work_per_item is a rough per-element cost used to skip
/// threading for small problems.
template <class F>
void parallel_for(int64_t n, int64_t work_per_item, F&& body) {
  if (n <= 0) return;
  int threads = max_threads();
  if (threads <= 1 || n * std::max<int64_t>(work_per_item, 1) < detail::kParallelWorkThreshold) {
    body(int64_t{0}, n);
    return;
  }
  threads = static_cast<int>(std::min<int64_t>(threads, n));
  const int64_t chunk = (n + threads - 1) / threads;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(threads) - 1);
  for (int t = 1; t < threads; ++t) {
    int64_t begin = t * chunk;
    int64_t end = std::min<int64_t>(begin + chunk, n);
    if (begin >= end) break;
    pool.emplace_back([&body, begin, end] { body(begin, end); });
  }
  body(int64_t{0}, std::min<int64_t>(chunk, n));
  for (auto& th : pool) th.join();
}

}  // namespace dge
