#include "issl/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace issl {

namespace {
std::atomic<int> g_threads{4};
}

void set_num_threads(int n) { g_threads.store(n < 1 ? 1 : n); }

int num_threads() { return g_threads.load(); }

// Below this many iterations the spawn cost of std::thread outweighs any
// split. The serial path runs the same per-element work in the same order,
// so outputs are bitwise unchanged either way.
constexpr std::int64_t kSerialCutoff = 4096;

void parallel_for_ranges(std::int64_t n,
                         const std::function<void(std::int64_t, std::int64_t)>& fn) {
  if (n <= 0) return;
  const int t = std::min<std::int64_t>(num_threads(), n);
  if (t <= 1 || n < kSerialCutoff) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(t);
  const std::int64_t chunk = (n + t - 1) / t;
  for (int k = 0; k < t; ++k) {
    const std::int64_t b = k * chunk;
    const std::int64_t e = std::min<std::int64_t>(b + chunk, n);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  for (auto& th : pool) th.join();
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn) {
  parallel_for_ranges(n, [&fn](std::int64_t b, std::int64_t e) {
    for (std::int64_t i = b; i < e; ++i) fn(i);
  });
}

}  // namespace issl
