#pragma once

#include <cstdint>
#include <cstdlib>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace miw {

// Numerical stability guard tripped (CLI maps this to exit code 3).
struct NumericGuardError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration or arguments (CLI maps this to exit code 2).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Density below this fraction of max(rho) counts as a node: values there are
// masked and velocity/phase are treated as undefined.
constexpr double kNodeThresholdRel = 1e-12;

namespace detail {

// Worker count: hardware concurrency capped at 8, further capped by the
// MIW_THREADS environment variable.
inline unsigned thread_count() {
  static const unsigned n = [] {
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    unsigned cap = hw < 8 ? hw : 8;
    if (const char* env = std::getenv("MIW_THREADS")) {
      char* end = nullptr;
      long v = std::strtol(env, &end, 10);
      if (end != env && v >= 1 && static_cast<unsigned long>(v) < cap)
        cap = static_cast<unsigned>(v);
    }
    return cap;
  }();
  return n;
}

// Runs f(begin, end) over disjoint chunks of [0, n). Chunk boundaries do not
// depend on the thread count, so chunked reductions merged in index order are
// reproducible for any MIW_THREADS setting.
inline void parallel_chunks(std::size_t n,
                            const std::function<void(std::size_t, std::size_t)>& f) {
  unsigned nt = thread_count();
  if (nt <= 1 || n < (std::size_t{1} << 15)) {
    f(0, n);
    return;
  }
  std::size_t chunk = (n + nt - 1) / nt;
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < nt; ++t) {
    std::size_t b = std::size_t{t} * chunk;
    std::size_t e = b + chunk < n ? b + chunk : n;
    if (b >= e) break;
    pool.emplace_back([&f, b, e] { f(b, e); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace detail
}  // namespace miw
