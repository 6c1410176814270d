#pragma once

#include <cstdlib>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace mcstra {

// Worker cap: MCSTRA_THREADS when set, otherwise machine parallelism.
inline int worker_count() {
  if (const char* env = std::getenv("MCSTRA_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : int(hw);
}

// Runs fn(i) for i in [0, n). Work is striped across workers; results
// must be written to per-index slots so the outcome is independent of
// scheduling.
template <class F>
void parallel_for(int n, F&& fn, int max_workers = -1) {
  int workers = max_workers > 0 ? max_workers : worker_count();
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(size_t(workers));
  std::exception_ptr error;
  std::mutex error_mutex;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < n; i += workers) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (std::thread& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace mcstra
