#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "fft.hpp"
#include "field.hpp"

namespace miw::detail {

// Wavenumbers 2*pi*f/L in FFT bin order. For odd-order derivatives the
// Nyquist bin of an even-length axis is zeroed (the standard symmetric
// choice); even powers keep the full |k|.
inline std::vector<double> wavenumbers(const GridSpec& g, std::size_t axis,
                                       bool zero_nyquist) {
  const std::size_t n = g.axes[axis].points;
  const double dk = 2.0 * std::numbers::pi / g.length(axis);
  std::vector<double> k(n);
  for (std::size_t j = 0; j < n; ++j) {
    long f = j <= n / 2 ? static_cast<long>(j)
                        : static_cast<long>(j) - static_cast<long>(n);
    k[j] = dk * static_cast<double>(f);
  }
  if (zero_nyquist && n % 2 == 0) k[n / 2] = 0.0;
  return k;
}

// Visits every node of spectral space; fn(flat_index, k) with k the
// per-axis wavenumber array currently in view.
template <class F>
inline void for_each_mode(const GridSpec& g,
                          const std::vector<std::vector<double>>& kaxes,
                          F&& fn) {
  const std::size_t dim = g.dim();
  std::array<std::size_t, 3> mi{0, 0, 0};
  std::array<double, 3> k{0, 0, 0};
  for (std::size_t a = 0; a < dim; ++a) k[a] = kaxes[a][0];
  const std::size_t total = g.size();
  for (std::size_t idx = 0; idx < total; ++idx) {
    fn(idx, k);
    for (std::size_t a = dim; a-- > 0;) {
      if (++mi[a] < g.axes[a].points) {
        k[a] = kaxes[a][mi[a]];
        break;
      }
      mi[a] = 0;
      k[a] = kaxes[a][0];
    }
  }
}

// Forward transform of a real field, reused for several derivative products.
// Periodic grids only; callers dispatch to the FD stencils on box grids.
struct Spectrum {
  const GridSpec& g;
  std::vector<cdouble> hat;
  std::vector<std::vector<double>> k1;  // odd-derivative wavenumbers
  std::vector<std::vector<double>> k2;  // even-derivative wavenumbers

  Spectrum(const GridSpec& grid, std::span<const double> f) : g(grid) {
    hat.assign(f.begin(), f.end());
    fft_forward(g, hat.data());
    init_k();
  }

  Spectrum(const GridSpec& grid, std::span<const cdouble> f)
      : g(grid), hat(f.begin(), f.end()) {
    fft_forward(g, hat.data());
    init_k();
  }

  void init_k() {
    for (std::size_t a = 0; a < g.dim(); ++a) {
      k1.push_back(wavenumbers(g, a, true));
      k2.push_back(wavenumbers(g, a, false));
    }
  }

  // Exponential lowpass, exp(-strength (|k|/k_nyq)^power) per axis. The
  // default is the classic smooth de-aliasing filter (knee near
  // 0.87 k_nyq); steeper strength/power pairs place a near-vertical
  // edge wherever the knee (factor one half) is wanted while staying
  // smooth in k.
  void lowpass(double strength = 36.0, double power = 36.0) {
    std::vector<std::vector<double>> fac;
    for (std::size_t a = 0; a < g.dim(); ++a) {
      const double knyq = std::numbers::pi / g.spacing(a);
      std::vector<double> f(g.axes[a].points);
      for (std::size_t j = 0; j < f.size(); ++j)
        f[j] =
            std::exp(-strength * std::pow(std::abs(k2[a][j]) / knyq, power));
      fac.push_back(std::move(f));
    }
    for_each_mode(g, fac, [&](std::size_t i, const std::array<double, 3>& f) {
      double m = 1.0;
      for (std::size_t a = 0; a < g.dim(); ++a) m *= f[a];
      hat[i] *= m;
    });
  }

  std::vector<double> real_inverse(std::vector<cdouble>&& buf) const {
    fft_inverse(g, buf.data());
    std::vector<double> out(buf.size());
    for (std::size_t i = 0; i < buf.size(); ++i) out[i] = buf[i].real();
    return out;
  }

  // d/dx_axis
  std::vector<double> derivative(std::size_t axis) const {
    std::vector<cdouble> buf(hat.size());
    for_each_mode(g, k1, [&](std::size_t i, const std::array<double, 3>& k) {
      buf[i] = hat[i] * cdouble(0.0, k[axis]);
    });
    return real_inverse(std::move(buf));
  }

  // sum_a w_a * d^2/dx_a^2
  std::vector<double> weighted_second(std::span<const double> w) const {
    std::vector<cdouble> buf(hat.size());
    for_each_mode(g, k2, [&](std::size_t i, const std::array<double, 3>& k) {
      double m = 0.0;
      for (std::size_t a = 0; a < g.dim(); ++a) m -= w[a] * k[a] * k[a];
      buf[i] = hat[i] * m;
    });
    return real_inverse(std::move(buf));
  }

  // d/dx_axis of (sum_a w_a d^2/dx_a^2). The odd factor uses the
  // Nyquist-zeroed table; the even sum keeps the full |k|. The Nyquist
  // bin is the unique positive-extreme frequency, so a value compare
  // against the even table identifies it.
  std::vector<double> derivative_of_weighted_second(
      std::size_t axis, std::span<const double> w) const {
    const std::size_t n = g.axes[axis].points;
    const double knyq = n % 2 == 0 ? k2[axis][n / 2] : 0.0;
    std::vector<cdouble> buf(hat.size());
    for_each_mode(g, k2, [&](std::size_t i, const std::array<double, 3>& k) {
      double m = 0.0;
      for (std::size_t a = 0; a < g.dim(); ++a) m -= w[a] * k[a] * k[a];
      const double kodd = k[axis] == knyq && knyq != 0.0 ? 0.0 : k[axis];
      buf[i] = hat[i] * m * cdouble(0.0, kodd);
    });
    return real_inverse(std::move(buf));
  }
};

// f(x - shift), trigonometric interpolation on a periodic grid.
inline std::vector<double> spectral_shift(const GridSpec& g,
                                          std::span<const double> f,
                                          std::span<const double> shift) {
  std::vector<cdouble> buf(f.begin(), f.end());
  fft_forward(g, buf.data());
  std::vector<std::vector<double>> ks;
  for (std::size_t a = 0; a < g.dim(); ++a)
    ks.push_back(wavenumbers(g, a, true));
  for_each_mode(g, ks, [&](std::size_t i, const std::array<double, 3>& k) {
    double phase = 0.0;
    for (std::size_t a = 0; a < g.dim(); ++a) phase -= k[a] * shift[a];
    buf[i] *= std::polar(1.0, phase);
  });
  fft_inverse(g, buf.data());
  std::vector<double> out(buf.size());
  for (std::size_t i = 0; i < buf.size(); ++i) out[i] = buf[i].real();
  return out;
}

inline std::vector<cdouble> spectral_shift_complex(const GridSpec& g,
                                                   std::span<const cdouble> f,
                                                   std::span<const double> shift) {
  std::vector<cdouble> buf(f.begin(), f.end());
  fft_forward(g, buf.data());
  std::vector<std::vector<double>> ks;
  for (std::size_t a = 0; a < g.dim(); ++a)
    ks.push_back(wavenumbers(g, a, true));
  for_each_mode(g, ks, [&](std::size_t i, const std::array<double, 3>& k) {
    double phase = 0.0;
    for (std::size_t a = 0; a < g.dim(); ++a) phase -= k[a] * shift[a];
    buf[i] *= std::polar(1.0, phase);
  });
  fft_inverse(g, buf.data());
  return buf;
}

// In-place convolution with a periodic Gaussian of per-axis widths sigma.
inline void spectral_gaussian_smooth(const GridSpec& g, std::vector<double>& f,
                                     std::span<const double> sigma) {
  std::vector<cdouble> buf(f.begin(), f.end());
  fft_forward(g, buf.data());
  std::vector<std::vector<double>> ks;
  for (std::size_t a = 0; a < g.dim(); ++a)
    ks.push_back(wavenumbers(g, a, false));
  for_each_mode(g, ks, [&](std::size_t i, const std::array<double, 3>& k) {
    double e = 0.0;
    for (std::size_t a = 0; a < g.dim(); ++a)
      e += 0.5 * sigma[a] * sigma[a] * k[a] * k[a];
    buf[i] *= std::exp(-e);
  });
  fft_inverse(g, buf.data());
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = buf[i].real();
}

}  // namespace miw::detail
