#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace fusionrank {

/// Resolves a requested worker count: a positive value is taken as-is, zero
/// falls back to $RERANK_WORKERS and then to the hardware concurrency.
std::size_t resolve_workers(std::size_t requested);

/// Runs fn(i) for i in [0, n) over contiguous static chunks. Work items must be
/// independent; the result is then identical for any worker count.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  if (workers <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t nthreads = std::min(workers, n);
  const std::size_t chunk = (n + nthreads - 1) / nthreads;
  // Per-chunk errors; the lowest failing chunk wins so the reported error does
  // not depend on scheduling.
  std::vector<std::exception_ptr> errors(nthreads);
  std::vector<std::thread> threads;
  threads.reserve(nthreads);
  for (std::size_t t = 0; t < nthreads; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    threads.emplace_back([&, t, begin, end] {
      try {
        for (std::size_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : threads) th.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace fusionrank
