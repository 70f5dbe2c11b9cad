#pragma once

// Seeded sub-streams and a minimal index-parallel loop.
//
// Every stochastic unit of work (a bootstrap replicate, a Monte Carlo
// iteration) draws from its own engine seeded by (master seed, stream tag,
// index). Results therefore never depend on how indices are scheduled
// across worker threads.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace late_bounds {

/// SplitMix64 finalizer; a bijective 64-bit mixer.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

enum class StreamTag : std::uint64_t { Bootstrap = 1, SimulateData = 2, SimulateBootstrap = 3, Oracle = 4 };

/// Seed for sub-stream `index` of kind `tag` under `master`.
constexpr std::uint64_t substream_seed(std::uint64_t master, StreamTag tag, std::uint64_t index) noexcept {
  return splitmix64(splitmix64(master ^ splitmix64(static_cast<std::uint64_t>(tag))) + index);
}

using Engine = std::mt19937_64;

inline Engine substream(std::uint64_t master, StreamTag tag, std::uint64_t index) {
  return Engine(substream_seed(master, tag, index));
}

/// Worker count: LATE_BOUNDS_THREADS if set and positive, else hardware concurrency.
inline unsigned default_workers() {
  if (const char* env = std::getenv("LATE_BOUNDS_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<unsigned>(v);
    } catch (const std::exception&) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, n) on up to `workers` threads. The first exception
/// thrown (lowest index wins) is rethrown after all workers join.
template <class Fn>
void parallel_for(std::size_t n, unsigned workers, Fn&& fn) {
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr first_err;
  std::size_t first_err_index = n;

  auto body = [&] {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (i < first_err_index) {
          first_err_index = i;
          first_err = std::current_exception();
        }
      }
    }
  };
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(body);
  body();
  pool.clear();
  if (first_err) std::rethrow_exception(first_err);
}

}  // namespace late_bounds
