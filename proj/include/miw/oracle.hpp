#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "fft.hpp"
#include "field.hpp"
#include "params.hpp"
#include "potential.hpp"
#include "spectral.hpp"

namespace miw {

// Two-component wavefunction in the z-spin basis.
struct SpinorState {
  GridSpec grid;
  std::vector<cdouble> plus;
  std::vector<cdouble> minus;
  double time = 0.0;

  double norm() const {
    double s = 0.0;
    for (std::size_t i = 0; i < plus.size(); ++i)
      s += std::norm(plus[i]) + std::norm(minus[i]);
    return std::sqrt(s * grid.cell_volume());
  }

  void normalize() {
    const double n = norm();
    if (n == 0.0) throw NumericGuardError("cannot normalize zero spinor");
    for (auto& v : plus) v /= n;
    for (auto& v : minus) v /= n;
  }

  void validate() const {
    if (plus.size() != grid.size() || minus.size() != grid.size())
      throw ConfigError("spinor size does not match grid");
    if (std::abs(norm() - 1.0) > 1e-9)
      throw NumericGuardError("spinor norm outside tolerance");
  }
};

// External magnetic field: uniform, or varying linearly along one grid
// axis, B(x) = b0 + slope * x[axis]. The three components live in spin
// space regardless of the grid dimension.
struct BFieldSpec {
  enum class Kind { uniform, linear_gradient };
  Kind kind = Kind::uniform;
  std::array<double, 3> b0{0.0, 0.0, 0.0};
  std::array<double, 3> slope{0.0, 0.0, 0.0};
  std::size_t axis = 0;

  static BFieldSpec make_uniform(std::array<double, 3> b) {
    BFieldSpec s;
    s.b0 = b;
    return s;
  }

  static BFieldSpec make_linear(std::array<double, 3> b0,
                                std::array<double, 3> slope, std::size_t axis) {
    BFieldSpec s;
    s.kind = Kind::linear_gradient;
    s.b0 = b0;
    s.slope = slope;
    s.axis = axis;
    return s;
  }

  std::array<double, 3> at(const std::array<double, 3>& x) const {
    if (kind == Kind::uniform) return b0;
    std::array<double, 3> b = b0;
    for (int c = 0; c < 3; ++c) b[c] += slope[c] * x[axis];
    return b;
  }

  // dB_c/dx_a, analytic.
  std::array<double, 3> gradient_along(std::size_t grid_axis) const {
    if (kind == Kind::linear_gradient && grid_axis == axis) return slope;
    return {0.0, 0.0, 0.0};
  }

  bool zero() const {
    auto z = [](const std::array<double, 3>& v) {
      return v[0] == 0.0 && v[1] == 0.0 && v[2] == 0.0;
    };
    return z(b0) && (kind == Kind::uniform || z(slope));
  }
};

namespace detail {

// Phase advance of the kinetic factor at the extreme grid mode must stay
// below pi per step, otherwise the discrete evolution aliases.
inline void check_kinetic_aliasing(const GridSpec& g,
                                   const PhysicalParams& params, double dt) {
  double phase = 0.0;
  for (std::size_t a = 0; a < g.dim(); ++a) {
    const double kmax = std::numbers::pi / g.spacing(a);
    phase += params.hbar * kmax * kmax / (2.0 * params.mass_for_axis(a)) * dt;
  }
  if (phase > std::numbers::pi)
    throw NumericGuardError(
        "time step too large: kinetic phase advance exceeds pi at the grid "
        "Nyquist mode");
}

// exp(-i hbar k^2 dt / 2m) factor per spectral mode.
inline std::vector<cdouble> kinetic_factors(const GridSpec& g,
                                            const PhysicalParams& params,
                                            double dt) {
  std::vector<std::vector<double>> ks;
  for (std::size_t a = 0; a < g.dim(); ++a)
    ks.push_back(wavenumbers(g, a, false));
  std::vector<cdouble> fac(g.size());
  for_each_mode(g, ks, [&](std::size_t i, const std::array<double, 3>& k) {
    double phase = 0.0;
    for (std::size_t a = 0; a < g.dim(); ++a)
      phase -= params.hbar * k[a] * k[a] /
               (2.0 * params.mass_for_axis(a)) * dt;
    fac[i] = std::polar(1.0, phase);
  });
  return fac;
}

}  // namespace detail

// Strang split-operator evolution of the Schrodinger equation:
// half potential kick, full spectral kinetic step, half potential kick.
inline WaveState evolve_schrodinger(const WaveState& state,
                                    const PotentialSpec& V,
                                    const PhysicalParams& params, double dt,
                                    std::size_t steps) {
  if (!(dt > 0)) throw ConfigError("dt must be positive");
  params.validate_for_grid(state.grid);
  detail::check_kinetic_aliasing(state.grid, params, dt);

  const ScalarField vf = V.evaluate(state.grid, params);
  std::vector<cdouble> half(vf.values.size());
  for (std::size_t i = 0; i < half.size(); ++i)
    half[i] = std::polar(1.0, -0.5 * vf.values[i] * dt / params.hbar);
  const std::vector<cdouble> kin =
      detail::kinetic_factors(state.grid, params, dt);

  WaveState out = state;
  for (std::size_t s = 0; s < steps; ++s) {
    for (std::size_t i = 0; i < out.psi.size(); ++i) out.psi[i] *= half[i];
    detail::fft_forward(out.grid, out.psi.data());
    for (std::size_t i = 0; i < out.psi.size(); ++i) out.psi[i] *= kin[i];
    detail::fft_inverse(out.grid, out.psi.data());
    for (std::size_t i = 0; i < out.psi.size(); ++i) out.psi[i] *= half[i];
  }
  out.time = state.time + dt * static_cast<double>(steps);
  return out;
}

// Uniformly spaced snapshots, including the initial state. stride counts
// solver steps between stored frames.
inline std::vector<WaveState> evolve_schrodinger_history(
    const WaveState& state, const PotentialSpec& V,
    const PhysicalParams& params, double dt, std::size_t steps,
    std::size_t stride) {
  if (stride == 0 || steps % stride != 0)
    throw ConfigError("history stride must divide step count");
  std::vector<WaveState> frames;
  frames.reserve(steps / stride + 1);
  frames.push_back(state);
  WaveState cur = state;
  for (std::size_t s = 0; s < steps / stride; ++s) {
    cur = evolve_schrodinger(cur, V, params, dt, stride);
    frames.push_back(cur);
  }
  return frames;
}

// Pauli evolution: the spectral kinetic step acts on each component,
// and the local step applies exp(-i(V I - mu B.sigma)dt/hbar) as an
// exact 2x2 unitary, exp(i phi n.sigma) = cos(phi) I + i sin(phi) n.sigma.
inline SpinorState evolve_pauli(const SpinorState& state,
                                const PotentialSpec& V, const BFieldSpec& B,
                                double mu, const PhysicalParams& params,
                                double dt, std::size_t steps) {
  if (!(dt > 0)) throw ConfigError("dt must be positive");
  params.validate_for_grid(state.grid);
  detail::check_kinetic_aliasing(state.grid, params, dt);

  const GridSpec& g = state.grid;
  const ScalarField vf = V.evaluate(g, params);
  const std::vector<cdouble> kin = detail::kinetic_factors(g, params, dt);

  // Precompute the half-step local unitary per grid point:
  // U = e^{-i V dt/2h} [cos(phi) I + i sin(phi) n.sigma], phi = mu|B|dt/2h.
  const std::size_t n = g.size();
  std::vector<cdouble> u00(n), u01(n), u10(n), u11(n);
  std::array<double, 3> x{};
  for (std::size_t i = 0; i < n; ++i) {
    g.point(i, x);
    const std::array<double, 3> b = B.at(x);
    const double bmag =
        std::sqrt(b[0] * b[0] + b[1] * b[1] + b[2] * b[2]);
    const double phi = mu * bmag * (0.5 * dt) / params.hbar;
    const cdouble vphase =
        std::polar(1.0, -0.5 * vf.values[i] * dt / params.hbar);
    double nx = 0.0, ny = 0.0, nz = 0.0;
    if (bmag > 0.0) {
      nx = b[0] / bmag;
      ny = b[1] / bmag;
      nz = b[2] / bmag;
    }
    const double c = std::cos(phi), s = std::sin(phi);
    // cos I + i sin (nx sx + ny sy + nz sz)
    u00[i] = vphase * cdouble(c, s * nz);
    u01[i] = vphase * cdouble(s * ny, s * nx);
    u10[i] = vphase * cdouble(-s * ny, s * nx);
    u11[i] = vphase * cdouble(c, -s * nz);
  }

  SpinorState out = state;
  for (std::size_t s = 0; s < steps; ++s) {
    for (std::size_t i = 0; i < n; ++i) {
      const cdouble p = out.plus[i], m = out.minus[i];
      out.plus[i] = u00[i] * p + u01[i] * m;
      out.minus[i] = u10[i] * p + u11[i] * m;
    }
    detail::fft_forward(g, out.plus.data());
    detail::fft_forward(g, out.minus.data());
    for (std::size_t i = 0; i < n; ++i) {
      out.plus[i] *= kin[i];
      out.minus[i] *= kin[i];
    }
    detail::fft_inverse(g, out.plus.data());
    detail::fft_inverse(g, out.minus.data());
    for (std::size_t i = 0; i < n; ++i) {
      const cdouble p = out.plus[i], m = out.minus[i];
      out.plus[i] = u00[i] * p + u01[i] * m;
      out.minus[i] = u10[i] * p + u11[i] * m;
    }
  }
  out.time = state.time + dt * static_cast<double>(steps);
  return out;
}

// Pauli-matrix expectation values of a spinor.
inline std::array<double, 3> sigma_expectation(const SpinorState& st) {
  double sx = 0.0, sy = 0.0, sz = 0.0, nrm = 0.0;
  for (std::size_t i = 0; i < st.plus.size(); ++i) {
    const cdouble p = st.plus[i], m = st.minus[i];
    const cdouble cross = std::conj(p) * m;
    sx += 2.0 * cross.real();
    sy += 2.0 * cross.imag();
    sz += std::norm(p) - std::norm(m);
    nrm += std::norm(p) + std::norm(m);
  }
  return {sx / nrm, sy / nrm, sz / nrm};
}

// Energy expectation <psi|H|psi> for drift diagnostics.
inline double energy_expectation(const WaveState& st, const PotentialSpec& V,
                                 const PhysicalParams& params) {
  const GridSpec& g = st.grid;
  const ScalarField vf = V.evaluate(g, params);
  std::vector<cdouble> hat(st.psi.begin(), st.psi.end());
  detail::fft_forward(g, hat.data());
  std::vector<std::vector<double>> ks;
  for (std::size_t a = 0; a < g.dim(); ++a)
    ks.push_back(detail::wavenumbers(g, a, false));
  double kin = 0.0, norm2 = 0.0;
  detail::for_each_mode(g, ks,
                        [&](std::size_t i, const std::array<double, 3>& k) {
    double e = 0.0;
    for (std::size_t a = 0; a < g.dim(); ++a)
      e += params.hbar * params.hbar * k[a] * k[a] /
           (2.0 * params.mass_for_axis(a));
    kin += e * std::norm(hat[i]);
    norm2 += std::norm(hat[i]);
  });
  kin /= norm2;
  double pot = 0.0, pnorm = 0.0;
  for (std::size_t i = 0; i < st.psi.size(); ++i) {
    pot += vf.values[i] * std::norm(st.psi[i]);
    pnorm += std::norm(st.psi[i]);
  }
  return kin + pot / pnorm;
}

}  // namespace miw
