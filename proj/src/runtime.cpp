#include "elite360/runtime.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace e360 {
namespace {

std::atomic<bool> g_deterministic{true};
std::atomic<int> g_threads{-1};

int threads_from_env() {
  const char* env = std::getenv("ELITE360_THREADS");
  if (env == nullptr) return 1;
  try {
    return std::max(1, std::stoi(env));
  } catch (...) {
    return 1;
  }
}

}  // namespace

void set_deterministic(bool enabled) { g_deterministic = enabled; }
bool deterministic() { return g_deterministic; }

void set_thread_count(int threads) { g_threads = std::max(1, threads); }

int thread_count() {
  int t = g_threads.load();
  if (t < 0) {
    t = threads_from_env();
    g_threads = t;
  }
  return t;
}

int effective_threads() { return deterministic() ? 1 : thread_count(); }

void parallel_for(std::ptrdiff_t n,
                  const std::function<void(std::ptrdiff_t, std::ptrdiff_t)>& fn) {
  if (n <= 0) return;
  const int workers = static_cast<int>(std::min<std::ptrdiff_t>(effective_threads(), n));
  if (workers <= 1) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::ptrdiff_t chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const std::ptrdiff_t begin = w * chunk;
    const std::ptrdiff_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace e360
