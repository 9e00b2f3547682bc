#pragma once

#include <cstddef>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace ekgnet {

inline std::size_t worker_count() {
  if (const char* env = std::getenv("EKGNET_THREADS")) {
    const long n = std::atol(env);
    if (n > 0) return static_cast<std::size_t>(n);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? hw : 1;
}

// Runs fn over [0, n) in contiguous chunks, one per worker. Callers must make
// writes disjoint (slot per index); results are then independent of scheduling.
inline void parallel_chunks(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
  const std::size_t workers = worker_count();
  if (n == 0) return;
  if (workers <= 1 || n < 2) {
    fn(0, n);
    return;
  }
  const std::size_t k = workers < n ? workers : n;
  const std::size_t chunk = (n + k - 1) / k;
  std::vector<std::thread> threads;
  threads.reserve(k - 1);
  for (std::size_t t = 1; t < k; ++t) {
    const std::size_t begin = t * chunk;
    if (begin >= n) break;
    const std::size_t end = begin + chunk < n ? begin + chunk : n;
    threads.emplace_back(fn, begin, end);
  }
  fn(0, chunk < n ? chunk : n);
  for (auto& th : threads) th.join();
}

}  // namespace ekgnet
