#ifndef RMS_PARALLEL_HPP
#define RMS_PARALLEL_HPP

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

#include "rms/environment.hpp"

namespace rms {

/// A family of independent replicates: replicate r uses streams keyed by
/// (seed, r), so results do not depend on the thread count.
struct EnsembleSpec {
  std::uint64_t seed = 0;
  std::uint64_t replicates = 0;
  unsigned threads = 1;
  Measure measure = Measure::size_biased;

  EnvSeedSpec env(std::uint64_t replicate, int horizon) const {
    return EnvSeedSpec{seed, horizon, measure, replicate};
  }
};

/// Runs produce(i) for i in [0, count) on up to `threads` workers and feeds
/// the results to consume(i, result) strictly in index order.
template <typename Result, typename Produce, typename Consume>
void run_ordered(std::uint64_t count, unsigned threads, Produce&& produce, Consume&& consume,
                 std::uint64_t chunk = 256) {
  threads = std::max(1u, threads);
  std::vector<Result> buffer;
  for (std::uint64_t base = 0; base < count; base += chunk) {
    const std::uint64_t size = std::min(chunk, count - base);
    buffer.assign(size, Result{});
    if (threads == 1 || size == 1) {
      for (std::uint64_t i = 0; i < size; ++i) buffer[i] = produce(base + i);
    } else {
      std::atomic<std::uint64_t> next{0};
      std::exception_ptr error;
      std::mutex error_mutex;
      auto worker = [&] {
        for (;;) {
          const std::uint64_t i = next.fetch_add(1);
          if (i >= size) return;
          try {
            buffer[i] = produce(base + i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
            next.store(size);
            return;
          }
        }
      };
      std::vector<std::thread> pool;
      const unsigned n = static_cast<unsigned>(std::min<std::uint64_t>(threads, size));
      pool.reserve(n);
      for (unsigned w = 0; w < n; ++w) pool.emplace_back(worker);
      for (auto& th : pool) th.join();
      if (error) std::rethrow_exception(error);
    }
    for (std::uint64_t i = 0; i < size; ++i) consume(base + i, std::move(buffer[i]));
  }
}

}  // namespace rms

#endif
