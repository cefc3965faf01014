#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace meanflow {

// Worker count from MF_THREADS; 1 when unset or invalid.
inline std::size_t thread_count() {
  const char* env = std::getenv("MF_THREADS");
  if (!env) return 1;
  try {
    const long n = std::stol(env);
    return n > 0 ? static_cast<std::size_t>(n) : 1;
  } catch (const std::exception&) {
    return 1;
  }
}

// Calls body(i) for i in [0, n) over contiguous chunks. Each index writes only
// its own outputs, so results do not depend on the thread count.
template <class Body>
void parallel_for(std::size_t n, Body&& body, std::size_t threads = thread_count()) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w * chunk; i < std::min(n, (w + 1) * chunk); ++i) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace meanflow
