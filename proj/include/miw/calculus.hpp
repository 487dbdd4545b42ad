#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "field.hpp"
#include "region.hpp"

namespace miw {

namespace detail {

// Second-order first derivative along one axis: central in the interior,
// periodic wrap or one-sided 3-point stencils at box edges.
inline std::vector<double> fd_derivative(const GridSpec& g,
                                         std::span<const double> f,
                                         std::size_t axis) {
  std::vector<double> out(f.size());
  const double inv2h = 1.0 / (2.0 * g.spacing(axis));
  const bool periodic = g.boundary == Boundary::periodic;
  for_each_line(g, axis, [&](std::size_t base, std::size_t s, std::size_t n) {
    auto at = [&](std::size_t j) { return f[base + j * s]; };
    for (std::size_t j = 1; j + 1 < n; ++j)
      out[base + j * s] = (at(j + 1) - at(j - 1)) * inv2h;
    if (periodic) {
      out[base] = (at(1) - at(n - 1)) * inv2h;
      out[base + (n - 1) * s] = (at(0) - at(n - 2)) * inv2h;
    } else {
      out[base] = (-3.0 * at(0) + 4.0 * at(1) - at(2)) * inv2h;
      out[base + (n - 1) * s] =
          (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) * inv2h;
    }
  });
  return out;
}

// Second-order second derivative along one axis.
inline std::vector<double> fd_second_derivative(const GridSpec& g,
                                                std::span<const double> f,
                                                std::size_t axis) {
  std::vector<double> out(f.size());
  const double invh2 = 1.0 / (g.spacing(axis) * g.spacing(axis));
  const bool periodic = g.boundary == Boundary::periodic;
  for_each_line(g, axis, [&](std::size_t base, std::size_t s, std::size_t n) {
    auto at = [&](std::size_t j) { return f[base + j * s]; };
    for (std::size_t j = 1; j + 1 < n; ++j)
      out[base + j * s] = (at(j + 1) - 2.0 * at(j) + at(j - 1)) * invh2;
    if (periodic) {
      out[base] = (at(1) - 2.0 * at(0) + at(n - 1)) * invh2;
      out[base + (n - 1) * s] = (at(0) - 2.0 * at(n - 1) + at(n - 2)) * invh2;
    } else {
      out[base] = (2.0 * at(0) - 5.0 * at(1) + 4.0 * at(2) - at(3)) * invh2;
      out[base + (n - 1) * s] = (2.0 * at(n - 1) - 5.0 * at(n - 2) +
                                 4.0 * at(n - 3) - at(n - 4)) *
                                invh2;
    }
  });
  return out;
}

}  // namespace detail

inline VectorField gradient(const ScalarField& f) {
  VectorField out = make_vector_field(f.grid);
  for (std::size_t a = 0; a < f.grid.dim(); ++a)
    out.comp[a] = detail::fd_derivative(f.grid, f.values, a);
  return out;
}

inline ScalarField laplacian(const ScalarField& f) {
  ScalarField out = make_scalar_field(f.grid);
  for (std::size_t a = 0; a < f.grid.dim(); ++a) {
    auto d2 = detail::fd_second_derivative(f.grid, f.values, a);
    for (std::size_t i = 0; i < d2.size(); ++i) out.values[i] += d2[i];
  }
  return out;
}

inline ScalarField divergence(const VectorField& v) {
  ScalarField out = make_scalar_field(v.grid);
  for (std::size_t a = 0; a < v.grid.dim(); ++a) {
    auto d = detail::fd_derivative(v.grid, v.comp[a], a);
    for (std::size_t i = 0; i < d.size(); ++i) out.values[i] += d[i];
  }
  return out;
}

inline double integrate(const ScalarField& f) {
  double s = 0.0;
  for (double v : f.values) s += v;
  return s * f.grid.cell_volume();
}

inline double integrate(const ScalarField& f, const Region& r) {
  double s = 0.0;
  std::array<double, 3> x{};
  const std::size_t dim = f.grid.dim();
  for (std::size_t i = 0; i < f.values.size(); ++i) {
    f.grid.point(i, x);
    if (r.contains(std::span<const double>(x.data(), dim))) s += f.values[i];
  }
  return s * f.grid.cell_volume();
}

}  // namespace miw
