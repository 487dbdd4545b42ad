#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace miw {

// Deterministic random draws. std::mt19937_64 output is pinned by the
// standard; the distributions are built from raw bits here because the
// std:: distribution adapters are implementation-defined.
struct Rng {
  std::mt19937_64 eng;

  explicit Rng(std::uint64_t seed) : eng(seed) {}

  // [0, 1)
  double uniform() {
    return static_cast<double>(eng() >> 11) * 0x1.0p-53;
  }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  double normal() {
    if (have_) {
      have_ = false;
      return cache_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.28318530717958647692529 * u2;
    cache_ = r * std::sin(a);
    have_ = true;
    return r * std::cos(a);
  }

 private:
  double cache_ = 0.0;
  bool have_ = false;
};

}  // namespace miw
