#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace statdiff {

/// Worker count for pair loops. 0 picks std::thread::hardware_concurrency().
///
/// Results never depend on the worker count: work is cut into a fixed set of
/// blocks whose partial results are reduced in block order.
struct Parallelism {
  unsigned workers = 0;

  unsigned resolved() const {
    if (workers > 0) return workers;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
  }
};

/// Runs fn(block) for block in [0, n_blocks), possibly concurrently.
template <class Fn>
void for_each_block(std::size_t n_blocks, Parallelism par, Fn&& fn) {
  const unsigned workers =
      static_cast<unsigned>(std::min<std::size_t>(par.resolved(), n_blocks));
  if (workers <= 1) {
    for (std::size_t b = 0; b < n_blocks; ++b) fn(b);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t b = next.fetch_add(1); b < n_blocks; b = next.fetch_add(1)) {
          try {
            fn(b);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace statdiff
