// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace srdl {

/// Worker cap for batched evaluation: SRDL_THREADS if set, else the core count.
inline std::size_t worker_threads() {
  if (const char* env = std::getenv("SRDL_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/**
 * Runs f(i) for i in [0, n) on up to worker_threads() threads. Callers write
 * results into per-index slots so the reduction order stays fixed. The first
 * exception thrown by any task is rethrown here.
 */
template <typename F>
void parallel_for(std::size_t n, F&& f, std::size_t max_threads = 0) {
  const std::size_t threads = std::min(n, max_threads ? max_threads : worker_threads());
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            f(i);
          } catch (...) {
            std::lock_guard lock(failure_mu);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace srdl
