#include "mesp/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace mesp {

namespace {

int threads_from_env() {
  const char* env = std::getenv("MESP_THREADS");
  if (env == nullptr) return 0;
  const int n = std::atoi(env);
  return n < 0 ? 0 : n;
}

std::atomic<int>& thread_cap() {
  static std::atomic<int> cap{threads_from_env()};
  return cap;
}

}  // namespace

int max_threads() { return thread_cap().load(); }

void set_max_threads(int n) { thread_cap().store(n < 0 ? 0 : n); }

void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& body) {
  const int cap = max_threads();
  const auto workers = static_cast<std::int64_t>(std::min<std::int64_t>(cap, n));
  if (workers <= 1) {
    for (std::int64_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (std::int64_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::int64_t i = w; i < n; i += workers) body(i);
    });
  }
}

}  // namespace mesp
