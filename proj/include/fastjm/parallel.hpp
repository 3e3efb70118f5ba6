#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace fastjm {

inline std::atomic<int>& thread_override() {
  static std::atomic<int> value{0};
  return value;
}

// Worker cap: a process-wide override if set, else FASTJM_THREADS if set to a
// positive integer, else the machine's hardware concurrency.
inline int thread_cap() {
  if (const int v = thread_override().load(); v > 0) return v;
  if (const char* env = std::getenv("FASTJM_THREADS")) {
    try {
      const int v = std::stoi(env);
      if (v > 0) return v;
    } catch (...) {
    }
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Static contiguous partition of [0, n). fn(i) must only write state owned by
// index i; callers combine per-index results in index order afterwards, so the
// outcome does not depend on the thread count.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, int threads = thread_cap()) {
  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), n / 64 + 1);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = w * chunk;
    const std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi] {
      try {
        for (std::size_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// Pins thread_cap() for the lifetime of the object.
class ScopedThreadCap {
 public:
  explicit ScopedThreadCap(int threads) : previous_(thread_override().exchange(threads)) {}
  ~ScopedThreadCap() { thread_override().store(previous_); }
  ScopedThreadCap(const ScopedThreadCap&) = delete;
  ScopedThreadCap& operator=(const ScopedThreadCap&) = delete;

 private:
  int previous_;
};

}  // namespace fastjm
