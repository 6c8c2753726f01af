#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace stochsol {

// Process-wide worker count. Results never depend on it: work is cut into
// blocks whose boundaries are fixed by the problem size, and reductions run
// over blocks in index order.
void set_worker_threads(unsigned n);
unsigned worker_threads();

template <class Fn>
void parallel_for(std::size_t n_blocks, Fn&& fn) {
  unsigned workers = worker_threads();
  if (workers <= 1 || n_blocks <= 1) {
    for (std::size_t b = 0; b < n_blocks; ++b) fn(b);
    return;
  }
  if (workers > n_blocks) workers = static_cast<unsigned>(n_blocks);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto body = [&] {
    for (;;) {
      std::size_t b = next.fetch_add(1);
      if (b >= n_blocks) return;
      try {
        fn(b);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(n_blocks);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(body);
  body();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

// Splits [0, n) into fixed chunks of `chunk` items.
struct BlockRange {
  std::size_t begin;
  std::size_t end;
};

inline std::size_t block_count(std::size_t n, std::size_t chunk) { return (n + chunk - 1) / chunk; }

inline BlockRange block_range(std::size_t b, std::size_t n, std::size_t chunk) {
  std::size_t begin = b * chunk;
  std::size_t end = begin + chunk < n ? begin + chunk : n;
  return {begin, end};
}

}  // namespace stochsol
