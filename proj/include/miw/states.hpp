#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "field.hpp"
#include "params.hpp"

namespace miw {

// Analytic initial states used by scenarios and tests. All states are
// normalized numerically on their grid so the WaveState invariant holds
// regardless of truncation.

// Product Gaussian: prod_a exp(-(x_a-c_a)^2/(4 s_a^2) + i p_a x_a / hbar).
inline WaveState gaussian_packet(const GridSpec& g, const PhysicalParams& params,
                                 const std::vector<double>& center,
                                 const std::vector<double>& sigma,
                                 const std::vector<double>& momentum = {}) {
  const std::size_t dim = g.dim();
  if (center.size() != dim || sigma.size() != dim)
    throw ConfigError("gaussian_packet: center/sigma dimension mismatch");
  WaveState st;
  st.grid = g;
  st.psi.resize(g.size());
  std::array<double, 3> x{};
  for (std::size_t i = 0; i < st.psi.size(); ++i) {
    g.point(i, x);
    double logmag = 0.0, phase = 0.0;
    for (std::size_t a = 0; a < dim; ++a) {
      const double d = x[a] - center[a];
      logmag -= d * d / (4.0 * sigma[a] * sigma[a]);
      if (!momentum.empty()) phase += momentum[a] * x[a] / params.hbar;
    }
    st.psi[i] = std::polar(std::exp(logmag), phase);
  }
  st.normalize();
  return st;
}

inline WaveState superpose(const WaveState& a, const WaveState& b,
                           cdouble ca = 1.0, cdouble cb = 1.0) {
  if (a.grid != b.grid) throw ConfigError("superpose: grid mismatch");
  WaveState st;
  st.grid = a.grid;
  st.time = a.time;
  st.psi.resize(a.psi.size());
  for (std::size_t i = 0; i < st.psi.size(); ++i)
    st.psi[i] = ca * a.psi[i] + cb * b.psi[i];
  st.normalize();
  return st;
}

// Ground state of the isotropic-per-axis harmonic oscillator:
// sigma_a = sqrt(hbar / (2 m_a omega_a)). Displacing the center gives
// the coherent state.
inline WaveState harmonic_packet(const GridSpec& g, const PhysicalParams& params,
                                 const std::vector<double>& omega,
                                 const std::vector<double>& center) {
  std::vector<double> sigma(g.dim());
  for (std::size_t a = 0; a < g.dim(); ++a)
    sigma[a] =
        std::sqrt(params.hbar / (2.0 * params.mass_for_axis(a) * omega[a]));
  return gaussian_packet(g, params, center, sigma);
}

// Plane wave with an integer number of wavelengths per axis (periodic).
inline WaveState plane_wave(const GridSpec& g, const std::vector<long>& bins) {
  WaveState st;
  st.grid = g;
  st.psi.resize(g.size());
  std::array<double, 3> x{};
  for (std::size_t i = 0; i < st.psi.size(); ++i) {
    g.point(i, x);
    double phase = 0.0;
    for (std::size_t a = 0; a < g.dim(); ++a)
      phase += 2.0 * std::numbers::pi * static_cast<double>(bins[a]) *
               (x[a] - g.axes[a].lo) / g.length(a);
    st.psi[i] = std::polar(1.0, phase);
  }
  st.normalize();
  return st;
}

inline double plane_wave_k(const GridSpec& g, std::size_t axis, long bin) {
  return 2.0 * std::numbers::pi * static_cast<double>(bin) / g.length(axis);
}

inline WaveState uniform_state(const GridSpec& g) {
  WaveState st;
  st.grid = g;
  st.psi.assign(g.size(), cdouble(1.0, 0.0));
  st.normalize();
  return st;
}

// Second eigenstate of the length-L box, sqrt(2/L) sin(2 pi x / L),
// and its non-smooth absolute-value twin. Both share the same density
// and zero velocity; only the sign pattern across the midpoint node
// differs.
inline WaveState well_second_eigenstate(const GridSpec& g, double L,
                                        bool absolute_value = false) {
  WaveState st;
  st.grid = g;
  st.psi.resize(g.size());
  std::array<double, 3> x{};
  for (std::size_t i = 0; i < st.psi.size(); ++i) {
    g.point(i, x);
    double v = std::sin(2.0 * std::numbers::pi * x[0] / L);
    if (absolute_value) v = std::abs(v);
    st.psi[i] = v;
  }
  st.normalize();
  return st;
}

// Smooth-but-non-analytic compact-bump pair: psi_bump is an odd pair of
// C-infinity bumps at x = -2 and x = +2 with opposite signs; its
// absolute value agrees with it on density and velocity yet differs as
// a function. Kept as a reconstruction-ambiguity fixture.
inline WaveState bump_pair_state(const GridSpec& g, bool absolute_value = false) {
  WaveState st;
  st.grid = g;
  st.psi.resize(g.size());
  std::array<double, 3> x{};
  for (std::size_t i = 0; i < st.psi.size(); ++i) {
    g.point(i, x);
    double v = 0.0;
    const double u1 = x[0] + 2.0, u2 = x[0] - 2.0;
    if (std::abs(u1) < 1.0) v = std::exp(-1.0 / (1.0 - u1 * u1));
    if (std::abs(u2) < 1.0) v = -std::exp(-1.0 / (1.0 - u2 * u2));
    if (absolute_value) v = std::abs(v);
    st.psi[i] = v;
  }
  st.normalize();
  return st;
}

// Hydrogen-like 2p state with m = 1 about the z axis, in units of a
// fixed Bohr radius a0: psi ~ -(x + i y) exp(-r / (2 a0)). The
// azimuthal velocity is hbar / (m r_cyl) at cylindrical radius r_cyl.
inline WaveState ring_state(const GridSpec& g, double a0 = 1.0) {
  if (g.dim() != 3) throw ConfigError("ring_state needs a 3D grid");
  WaveState st;
  st.grid = g;
  st.psi.resize(g.size());
  std::array<double, 3> x{};
  for (std::size_t i = 0; i < st.psi.size(); ++i) {
    g.point(i, x);
    const double r = std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
    st.psi[i] = cdouble(-x[0], -x[1]) * std::exp(-r / (2.0 * a0));
  }
  st.normalize();
  return st;
}

}  // namespace miw
