#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace reflect {

// Worker count for path-parallel loops: REFLECT_THREADS caps (or raises) the
// hardware default; always at least 1.
inline int worker_count() {
  unsigned hw = std::thread::hardware_concurrency();
  int n = hw == 0 ? 1 : static_cast<int>(hw);
  if (const char* env = std::getenv("REFLECT_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) n = static_cast<int>(std::min<long>(v, 256));
  }
  return n;
}

// Runs fn(i) for i in [0, n) with a static cyclic schedule. Each index is
// processed by a fixed worker, so any per-index outputs land in preassigned
// slots and the result is identical to the serial order regardless of timing.
inline void parallel_for_index(std::int64_t n, const std::function<void(std::int64_t)>& fn) {
  int workers = std::min<std::int64_t>(worker_count(), n > 0 ? n : 1);
  if (workers <= 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  std::exception_ptr first_error;
  std::mutex err_mutex;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      try {
        for (std::int64_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace reflect
