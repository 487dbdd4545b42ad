#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <span>
#include <vector>

#include "grid.hpp"
#include "params.hpp"

namespace miw {

using cdouble = std::complex<double>;

struct ScalarField {
  GridSpec grid;
  std::vector<double> values;
};

inline ScalarField make_scalar_field(const GridSpec& g, double fill = 0.0) {
  return ScalarField{g, std::vector<double>(g.size(), fill)};
}

// One component plane per configuration axis plus a shared definedness mask
// (velocity-like fields are meaningless where the density vanishes).
struct VectorField {
  GridSpec grid;
  std::vector<std::vector<double>> comp;
  std::vector<std::uint8_t> defined;
};

inline VectorField make_vector_field(const GridSpec& g, double fill = 0.0) {
  VectorField f;
  f.grid = g;
  f.comp.assign(g.dim(), std::vector<double>(g.size(), fill));
  f.defined.assign(g.size(), 1);
  return f;
}

inline double field_max(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, x);
  return m;
}

inline double node_threshold(std::span<const double> rho) {
  return kNodeThresholdRel * field_max(rho);
}

inline std::vector<std::uint8_t> density_mask(std::span<const double> rho) {
  const double thr = node_threshold(rho);
  std::vector<std::uint8_t> m(rho.size());
  for (std::size_t i = 0; i < rho.size(); ++i) m[i] = rho[i] >= thr ? 1 : 0;
  return m;
}

struct WaveState {
  GridSpec grid;
  std::vector<cdouble> psi;
  double time = 0.0;

  double norm() const {
    double s = 0.0;
    for (const auto& z : psi) s += std::norm(z);
    return std::sqrt(s * grid.cell_volume());
  }

  void normalize() {
    double n = norm();
    if (!(n > 0)) throw NumericGuardError("cannot normalize a null wavefunction");
    double inv = 1.0 / n;
    for (auto& z : psi) z *= inv;
  }

  void validate() const {
    grid.validate();
    if (psi.size() != grid.size())
      throw ConfigError("wavefunction size must match the grid");
    if (std::abs(norm() - 1.0) > 1e-9)
      throw ConfigError("wavefunction must be normalized to 1 within 1e-9");
  }
};

struct HydroState {
  GridSpec grid;
  std::vector<double> rho;
  VectorField velocity;
  double time = 0.0;

  // Continuation cache: the complex field this state was decomposed from,
  // when one exists. (rho, velocity) do not determine the deep-tail phase
  // (velocities are masked below the node threshold), so rebuilding the
  // complex representation from scratch each step re-quotients roundoff
  // density there and pumps mask-edge noise; a stepped chain instead
  // carries the field forward. Consumers verify the cache against rho and
  // velocity before trusting it, so mutating either simply invalidates it.
  std::vector<cdouble> psi;

  double total_mass() const {
    double s = 0.0;
    for (double r : rho) s += r;
    return s * grid.cell_volume();
  }

  void validate() const {
    grid.validate();
    if (rho.size() != grid.size())
      throw ConfigError("density size must match the grid");
    if (velocity.comp.size() != grid.dim() ||
        velocity.defined.size() != grid.size())
      throw ConfigError("velocity field shape must match the grid");
    if (!psi.empty() && psi.size() != grid.size())
      throw ConfigError("cached wavefunction size must match the grid");
    for (double r : rho)
      if (r < 0) throw ConfigError("density must be nonnegative");
    if (std::abs(total_mass() - 1.0) > 1e-6)
      throw ConfigError("density must integrate to 1 within 1e-6");
  }
};

namespace detail {

// Fills masked entries with the value of the nearest defined node
// (multi-source breadth-first, deterministic scan order).
inline void extrapolate_masked(const GridSpec& g, std::vector<double>& f,
                               const std::vector<std::uint8_t>& defined) {
  const std::size_t n = g.size();
  std::vector<std::uint8_t> have(defined.begin(), defined.end());
  std::vector<std::size_t> frontier, next;
  for (std::size_t i = 0; i < n; ++i)
    if (have[i]) frontier.push_back(i);
  if (frontier.empty() || frontier.size() == n) return;
  const std::size_t dim = g.dim();
  while (!frontier.empty()) {
    next.clear();
    for (std::size_t i : frontier) {
      auto mi = g.unravel(i);
      for (std::size_t a = 0; a < dim; ++a) {
        const std::size_t na = g.axes[a].points;
        const std::size_t s = g.stride(a);
        for (int dir = -1; dir <= 1; dir += 2) {
          std::size_t j;
          if (dir < 0) {
            if (mi[a] == 0) {
              if (g.boundary != Boundary::periodic) continue;
              j = i + (na - 1) * s;
            } else {
              j = i - s;
            }
          } else {
            if (mi[a] + 1 == na) {
              if (g.boundary != Boundary::periodic) continue;
              j = i - (na - 1) * s;
            } else {
              j = i + s;
            }
          }
          if (!have[j]) {
            have[j] = 1;
            f[j] = f[i];
            next.push_back(j);
          }
        }
      }
    }
    frontier.swap(next);
  }
}

}  // namespace detail
}  // namespace miw
