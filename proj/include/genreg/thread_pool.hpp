// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace genreg {

/// Worker count resolution: GENREG_WORKERS env var overrides the requested
/// count; 0 means hardware concurrency.
inline int resolve_workers(int requested) {
  if (const char* env = std::getenv("GENREG_WORKERS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : int(hw);
}

/// Run fn(i) for i in [0, n) on up to `workers` threads. Work items are
/// claimed from a shared atomic counter; every item writes only its own
/// output slot, so results are independent of the worker count.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  workers = resolve_workers(workers);
  if (n == 0) return;
  if (workers <= 1 || n == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  auto body = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n || failed.load()) return;
      try {
        fn(i);
      } catch (...) {
        if (!failed.exchange(true)) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> threads;
  const int count = int(std::min<std::size_t>(std::size_t(workers), n));
  threads.reserve(std::size_t(count));
  for (int t = 0; t < count; ++t) threads.emplace_back(body);
  for (auto& t : threads) t.join();
  if (failed.load() && error) std::rethrow_exception(error);
}

}  // namespace genreg
