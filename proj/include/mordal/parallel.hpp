#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace mordal {

// Worker count from MORDAL_PARALLELISM, falling back to hardware concurrency.
inline std::size_t default_parallelism() {
  if (const char* env = std::getenv("MORDAL_PARALLELISM")) {
    try {
      const long value = std::stol(env);
      if (value > 0) return static_cast<std::size_t>(value);
    } catch (const std::exception&) {
    }
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

// Runs fn(i) for i in [0, n) on up to max_workers threads. If several calls
// throw, the exception from the lowest index is rethrown, so failures do not
// depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t max_workers = default_parallelism()) {
  if (n == 0) return;
  const std::size_t workers = std::clamp<std::size_t>(max_workers, 1, n);
  std::vector<std::exception_ptr> failures(n);
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        failures[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            failures[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto& failure : failures) {
    if (failure) std::rethrow_exception(failure);
  }
}

}  // namespace mordal
