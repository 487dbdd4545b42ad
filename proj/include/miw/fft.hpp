#pragma once

#include <complex>
#include <map>
#include <mutex>
#include <utility>
#include <vector>

#include <fftw3.h>

#include "grid.hpp"

namespace miw::detail {

// Cached in-place FFTW plans keyed by (shape, sign). Plans are created with
// FFTW_UNALIGNED so the thread-safe new-array execute interface works on any
// caller buffer; creation is serialized, execution is not.
class FftPlans {
 public:
  static FftPlans& instance() {
    static FftPlans p;
    return p;
  }

  void run(const std::vector<int>& shape, std::complex<double>* data,
           int sign) {
    fftw_plan plan = get(shape, sign);
    fftw_execute_dft(plan, reinterpret_cast<fftw_complex*>(data),
                     reinterpret_cast<fftw_complex*>(data));
  }

 private:
  fftw_plan get(const std::vector<int>& shape, int sign) {
    std::lock_guard<std::mutex> lock(mu_);
    auto key = std::make_pair(shape, sign);
    auto it = plans_.find(key);
    if (it != plans_.end()) return it->second;
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    std::vector<std::complex<double>> scratch(n);
    fftw_plan p = fftw_plan_dft(
        static_cast<int>(shape.size()), shape.data(),
        reinterpret_cast<fftw_complex*>(scratch.data()),
        reinterpret_cast<fftw_complex*>(scratch.data()), sign,
        FFTW_ESTIMATE | FFTW_UNALIGNED);
    plans_.emplace(std::move(key), p);
    return p;
  }

  std::mutex mu_;
  std::map<std::pair<std::vector<int>, int>, fftw_plan> plans_;
};

inline std::vector<int> fft_shape(const GridSpec& g) {
  std::vector<int> shape;
  shape.reserve(g.dim());
  for (const auto& a : g.axes) shape.push_back(static_cast<int>(a.points));
  return shape;
}

inline void fft_forward(const GridSpec& g, std::complex<double>* data) {
  FftPlans::instance().run(fft_shape(g), data, FFTW_FORWARD);
}

// Normalized inverse.
inline void fft_inverse(const GridSpec& g, std::complex<double>* data) {
  FftPlans::instance().run(fft_shape(g), data, FFTW_BACKWARD);
  const double s = 1.0 / static_cast<double>(g.size());
  for (std::size_t i = 0, n = g.size(); i < n; ++i) data[i] *= s;
}

}  // namespace miw::detail
