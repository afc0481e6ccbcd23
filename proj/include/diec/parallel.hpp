#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace diec {

inline int& num_threads_ref() {
  static int n = []() {
    unsigned hw = std::thread::hardware_concurrency();
    return static_cast<int>(std::min(hw == 0 ? 1u : hw, 4u));
  }();
  return n;
}

inline void set_num_threads(int n) { num_threads_ref() = n < 1 ? 1 : n; }
inline int num_threads() { return num_threads_ref(); }

// Static partition of [0, n). Each index is processed by exactly one worker
// and workers write disjoint slots, so results are identical for any thread
// count. Exceptions from workers are rethrown on the caller thread.
inline void parallel_for(size_t n, const std::function<void(size_t)>& fn) {
  int nt = std::min<size_t>(num_threads(), n);
  if (nt <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errs(nt);
  size_t chunk = (n + nt - 1) / nt;
  for (int w = 0; w < nt; ++w) {
    size_t lo = w * chunk, hi = std::min(n, lo + chunk);
    workers.emplace_back([&, lo, hi, w]() {
      try {
        for (size_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        errs[w] = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
}

}  // namespace diec
