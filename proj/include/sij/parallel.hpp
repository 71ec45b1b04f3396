#pragma once
// Minimal fork-join helper. Thread count comes from SIJ_THREADS (falling back
// to hardware concurrency) and can be pinned per scope for reproducibility
// tests. Chunks are assigned statically so that any reduction done per chunk
// and merged in chunk order is independent of the execution schedule.

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace sij {

inline int& thread_count_override() {
  static int v = 0;  // 0 = resolve from environment
  return v;
}

inline int thread_count() {
  if (thread_count_override() > 0) return thread_count_override();
  if (const char* env = std::getenv("SIJ_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

// RAII scope that forces a specific worker count (1 = serial).
class ThreadCountGuard {
public:
  explicit ThreadCountGuard(int n) : saved_(thread_count_override()) {
    thread_count_override() = n;
  }
  ~ThreadCountGuard() { thread_count_override() = saved_; }

private:
  int saved_;
};

// fn(i) for i in [begin, end). Work is split into contiguous chunks; each
// worker owns a fixed chunk, so per-index outputs never race.
inline void parallel_for(std::size_t begin, std::size_t end,
                         const std::function<void(std::size_t)>& fn) {
  const std::size_t n = end > begin ? end - begin : 0;
  if (n == 0) return;
  const int workers = std::min<std::size_t>(static_cast<std::size_t>(thread_count()), n);
  if (workers <= 1) {
    for (std::size_t i = begin; i < end; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  const std::size_t chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const std::size_t lo = begin + chunk * static_cast<std::size_t>(w);
    const std::size_t hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

// Same splitting, but hands each worker its chunk bounds. Useful when the
// body wants to accumulate into a per-chunk buffer.
inline void parallel_chunks(std::size_t n,
                            const std::function<void(std::size_t chunk_index,
                                                     std::size_t lo, std::size_t hi)>& fn,
                            std::size_t n_chunks) {
  if (n == 0 || n_chunks == 0) return;
  n_chunks = std::min(n_chunks, n);
  const std::size_t chunk = (n + n_chunks - 1) / n_chunks;
  std::vector<std::pair<std::size_t, std::size_t>> bounds;
  for (std::size_t c = 0; c * chunk < n; ++c)
    bounds.emplace_back(c * chunk, std::min(n, (c + 1) * chunk));
  parallel_for(0, bounds.size(), [&](std::size_t c) { fn(c, bounds[c].first, bounds[c].second); });
}

}  // namespace sij
