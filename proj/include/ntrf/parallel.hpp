#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace ntrf {

// Runs fn(begin, end, worker) over `workers` contiguous chunks of [0, n).
// The partition depends only on (n, workers), so per-worker results
// reduced in worker order are reproducible. workers <= 1 runs inline.
template <typename Fn>
void parallel_chunks(std::size_t n, int workers, Fn&& fn) {
  const std::size_t w = std::max<std::size_t>(1, std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), n));
  if (w <= 1) {
    fn(std::size_t{0}, n, 0);
    return;
  }
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(w);
  const std::size_t chunk = (n + w - 1) / w;
  for (std::size_t k = 0; k < w; ++k) {
    const std::size_t begin = std::min(n, k * chunk);
    const std::size_t end = std::min(n, begin + chunk);
    threads.emplace_back([&, begin, end, k] {
      try {
        fn(begin, end, static_cast<int>(k));
      } catch (...) {
        errors[k] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline int default_workers() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace ntrf
