#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "calculus.hpp"
#include "field.hpp"
#include "oracle.hpp"
#include "params.hpp"
#include "potential.hpp"
#include "spectral.hpp"

namespace miw {

namespace detail {

// Derivative dispatch: spectral on periodic grids (the accuracy-critical
// path), finite differences on box grids.
inline std::vector<double> deriv_any(const GridSpec& g,
                                     std::span<const double> f,
                                     std::size_t axis) {
  if (g.boundary == Boundary::periodic) return Spectrum(g, f).derivative(axis);
  return fd_derivative(g, f, axis);
}

inline std::vector<double> weighted_second_any(const GridSpec& g,
                                               std::span<const double> f,
                                               std::span<const double> w) {
  if (g.boundary == Boundary::periodic)
    return Spectrum(g, f).weighted_second(w);
  std::vector<double> out(f.size(), 0.0);
  for (std::size_t a = 0; a < g.dim(); ++a) {
    auto d2 = fd_second_derivative(g, f, a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += w[a] * d2[i];
  }
  return out;
}

// Per-axis kinetic weights hbar^2 / 2 m_a.
inline std::vector<double> kinetic_weights(const GridSpec& g,
                                           const PhysicalParams& params) {
  std::vector<double> w(g.dim());
  for (std::size_t a = 0; a < g.dim(); ++a)
    w[a] = params.hbar * params.hbar / (2.0 * params.mass_for_axis(a));
  return w;
}

// Analytic gradient of the static potential; only the custom kind falls
// back to numerical differentiation. Keeping this analytic keeps seam
// artifacts of non-periodic potentials on periodic grids out of the
// force balance.
inline std::vector<std::vector<double>> potential_gradient(
    const PotentialSpec& V, const GridSpec& g, const PhysicalParams& params) {
  std::vector<std::vector<double>> grad(g.dim(),
                                        std::vector<double>(g.size(), 0.0));
  std::array<double, 3> x{};
  switch (V.kind) {
    case PotentialKind::free_space:
    case PotentialKind::double_slit:
      break;
    case PotentialKind::harmonic:
      for (std::size_t i = 0; i < g.size(); ++i) {
        g.point(i, x);
        for (std::size_t a = 0; a < g.dim(); ++a) {
          const double c = V.center.empty() ? 0.0 : V.center[a];
          grad[a][i] = params.mass_for_axis(a) * V.omega[a] * V.omega[a] *
                       (x[a] - c);
        }
      }
      break;
    case PotentialKind::infinite_well:
      if (g.boundary == Boundary::periodic) {
        const ScalarField vf = V.evaluate(g, params);
        for (std::size_t a = 0; a < g.dim(); ++a)
          grad[a] = fd_derivative(g, vf.values, a);
      }
      break;
    case PotentialKind::custom_grid:
      for (std::size_t a = 0; a < g.dim(); ++a)
        grad[a] = deriv_any(g, V.custom.values, a);
      break;
  }
  return grad;
}

}  // namespace detail

// rho = |Psi|^2, v_a = (hbar/m_a) Im(d_a Psi / Psi); velocity masked
// where the density falls below the node threshold.
inline HydroState madelung_decompose(const WaveState& state,
                                     const PhysicalParams& params) {
  params.validate_for_grid(state.grid);
  const GridSpec& g = state.grid;
  const std::size_t n = g.size();

  HydroState out;
  out.grid = g;
  out.time = state.time;
  out.psi = state.psi;
  out.rho.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.rho[i] = std::norm(state.psi[i]);

  out.velocity = make_vector_field(g);
  out.velocity.defined = density_mask(out.rho);

  for (std::size_t a = 0; a < g.dim(); ++a) {
    std::vector<cdouble> dpsi;
    if (g.boundary == Boundary::periodic) {
      dpsi.assign(state.psi.begin(), state.psi.end());
      detail::fft_forward(g, dpsi.data());
      std::vector<std::vector<double>> ks;
      for (std::size_t b = 0; b < g.dim(); ++b)
        ks.push_back(detail::wavenumbers(g, b, true));
      detail::for_each_mode(g, ks,
                            [&](std::size_t i, const std::array<double, 3>& k) {
        dpsi[i] *= cdouble(0.0, k[a]);
      });
      detail::fft_inverse(g, dpsi.data());
    } else {
      // component-wise finite differences of the complex field
      std::vector<double> re(n), im(n);
      for (std::size_t i = 0; i < n; ++i) {
        re[i] = state.psi[i].real();
        im[i] = state.psi[i].imag();
      }
      auto dre = detail::fd_derivative(g, re, a);
      auto dim_ = detail::fd_derivative(g, im, a);
      dpsi.resize(n);
      for (std::size_t i = 0; i < n; ++i) dpsi[i] = cdouble(dre[i], dim_[i]);
    }
    // v = (hbar/m) Im(dpsi conj(psi)) / |psi|^2. The numerator is zeroed
    // below the roundoff floor of the full product magnitude so states
    // with exactly zero current decompose to exactly zero velocity
    // instead of derivative jitter.
    std::vector<double> num(n);
    double prodmax = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const cdouble prod = dpsi[i] * std::conj(state.psi[i]);
      num[i] = prod.imag();
      prodmax = std::max(prodmax, std::abs(prod));
    }
    const double nfloor = 1e-12 * prodmax;
    const double scale = params.hbar / params.mass_for_axis(a);
    for (std::size_t i = 0; i < n; ++i) {
      if (!out.velocity.defined[i]) continue;
      if (std::abs(num[i]) <= nfloor) continue;
      out.velocity.comp[a][i] = scale * num[i] / out.rho[i];
    }
  }
  return out;
}

// Q = sum_k (-hbar^2/2m_k) (d_k^2 sqrt(rho)) / sqrt(rho); masked points
// filled from the nearest defined neighbor so downstream field steps
// stay total.
inline ScalarField quantum_potential(const ScalarField& rho,
                                     const PhysicalParams& params) {
  const GridSpec& g = rho.grid;
  params.validate_for_grid(g);
  const std::size_t n = g.size();
  std::vector<double> amp(n);
  for (std::size_t i = 0; i < n; ++i) amp[i] = std::sqrt(std::max(rho.values[i], 0.0));
  const auto w = detail::kinetic_weights(g, params);
  const auto ka = detail::weighted_second_any(g, amp, w);
  auto defined = density_mask(rho.values);

  ScalarField q = make_scalar_field(g);
  for (std::size_t i = 0; i < n; ++i)
    if (defined[i]) q.values[i] = -ka[i] / amp[i];
  detail::extrapolate_masked(g, q.values, defined);
  return q;
}

// -grad Q, evaluated as the amplitude product
//   -dQ/dx_a = (A d_a(KA) - KA d_a A) / rho,  KA = sum_b (hbar^2/2m_b) d_b^2 A,
// so the extrapolated Q field is never differentiated (its mask-edge
// plateau would ring globally through the spectral derivative). Masked
// points are filled from the nearest defined neighbor; the returned mask
// tells genuine values from extrapolated ones.
inline VectorField quantum_force(const ScalarField& rho,
                                 const PhysicalParams& params) {
  const GridSpec& g = rho.grid;
  params.validate_for_grid(g);
  const std::size_t n = g.size();
  std::vector<double> amp(n);
  for (std::size_t i = 0; i < n; ++i)
    amp[i] = std::sqrt(std::max(rho.values[i], 0.0));
  const auto w = detail::kinetic_weights(g, params);
  const auto ka = detail::weighted_second_any(g, amp, w);

  VectorField f = make_vector_field(g);
  f.defined = density_mask(rho.values);
  for (std::size_t a = 0; a < g.dim(); ++a) {
    const auto dka = detail::deriv_any(g, ka, a);
    const auto damp = detail::deriv_any(g, amp, a);
    for (std::size_t i = 0; i < n; ++i)
      if (f.defined[i])
        f.comp[a][i] =
            (amp[i] * dka[i] - ka[i] * damp[i]) / rho.values[i];
    detail::extrapolate_masked(g, f.comp[a], f.defined);
  }
  return f;
}

namespace detail {

// Right-hand side of the conservative form d/dt (rho, rho*v). The
// quantum force enters as a pure product of amplitude derivatives,
// rho * dQ/dx_a = -(A d_a(KA) - KA d_a A) with A = sqrt(rho) and
// KA = sum_b (hbar^2/2 m_b) d_b^2 A, so nothing is ever divided by a
// small density before being differentiated.
//
// Tail handling: sqrt turns roundoff-level density jitter into jagged
// amplitude whose spectral derivatives ring across the whole grid, so
// the amplitude is cut to zero below 1e-13 of the density peak (one
// decade under the public node threshold) and every spectral derivative
// here passes through the Hou-Li de-aliasing filter. The advection
// quotient is floored at the same cut.
// Smooth ramp in log(rho): 0 at or below lo, 1 at or above hi, with every
// derivative vanishing at both ends (exp(-1/u) bump transition). Spectral
// derivatives of a tapered field then see no kink at the band edges; a
// polynomial ramp is only C1 and its curvature jumps ring globally through
// the second-derivative operator.
inline double log_taper(double rho, double lo, double hi) {
  if (!(rho > lo)) return 0.0;
  if (rho >= hi) return 1.0;
  const double u = std::log(rho / lo) / std::log(hi / lo);
  const double fu = std::exp(-1.0 / u);
  const double fv = std::exp(-1.0 / (1.0 - u));
  return fu / (fu + fv);
}

// Spectral cliff for the evolution: a near-vertical but smooth lowpass
// with the knee (factor one half) at kCliffKneeFrac of the Nyquist
// wavenumber. Every spectral product inside the right-hand side and
// every completed step passes through it. The knee must sit below the
// wavenumber threshold of the tail-ripple pump (see the trust-band
// comment below) and above the highest wavenumber carrying genuine
// state content; scenario grids are chosen so genuine spectra die well
// below the knee.
inline constexpr double kCliffKneeFrac = 0.30;
inline constexpr double kCliffPower = 80.0;
// ln2 / kneefrac^power, so the factor is one half at the knee.
inline constexpr double kCliffStrength = 4.689484270367087e+41;

struct HydroRhs {
  const GridSpec& g;
  const PhysicalParams& params;
  std::vector<double> w;                           // kinetic weights
  std::vector<std::vector<double>> vgrad;          // analytic dV/dx_a

  // Tail regularization. The quantum force is evaluated in its stress
  // divergence form, which is polynomial in rho except for one rational
  // term whose denominator gets an analytic soft floor sqrt(rho^2+q^2):
  // no square root of the density appears anywhere in the evolution, so
  // grid-level density noise is never amplified by a 1/sqrt(rho)
  // Jacobian in the tail. The soft floor biases that term where
  // rho ~ q, so the total force density (quantum plus potential) is
  // faded to zero across the trust band, whose top sits well above q.
  // For a stationary state the two forces cancel pointwise, so scaling
  // their sum changes nothing; in the tail the fade only suppresses a
  // force already proportional to a vanishing density. Momenta are
  // faded across the same band each step: below it a velocity is pure
  // quotient noise, and the per-step fade acts as a damper that keeps
  // band momenta at their per-step forcing level instead of letting
  // them integrate. All fades use the smooth log-density ramp above;
  // any transition narrower than a few decades of rho is a feature two
  // or three grid cells wide (a localized packet loses about one decade
  // of density per two cells) whose unresolved spectral content aliases
  // through the derivative operators and destabilizes the bulk.
  // The floor sits two decades below the bottom of the trust band: the
  // floor's bias force scales like (q/rho)^2 above it, so keeping the
  // band that far above q makes the bias negligible at every point
  // where the force is not already faded to zero.
  static constexpr double kStressFloorRel = 1e-11;
  static constexpr double kMomentumFloorRel = 1e-9;
  static constexpr double kMomentumTrustRel = 1e-6;

  HydroRhs(const GridSpec& grid, const PotentialSpec& V,
           const PhysicalParams& p)
      : g(grid), params(p), w(kinetic_weights(grid, p)),
        vgrad(potential_gradient(V, grid, p)) {}

  std::vector<double> filtered_deriv(std::span<const double> f,
                                     std::size_t axis) const {
    if (g.boundary != Boundary::periodic) return fd_derivative(g, f, axis);
    Spectrum s(g, f);
    s.lowpass(kCliffStrength, kCliffPower);
    return s.derivative(axis);
  }

  void eval(const std::vector<double>& rho,
            const std::vector<std::vector<double>>& mom,
            std::vector<double>& drho,
            std::vector<std::vector<double>>& dmom) const {
    const std::size_t n = g.size();
    const std::size_t dim = g.dim();

    const double rmax = field_max(rho);
    const double qfloor = kStressFloorRel * rmax;
    const double trust_lo = kMomentumFloorRel * rmax;
    const double trust_hi = kMomentumTrustRel * rmax;

    // Analytic soft floor for quotients by rho: matches rho to relative
    // q^2/rho^2 above the floor and leaves no curvature kink at the
    // crossing shell for the spectral derivatives to ring on.
    std::vector<double> rho_soft(n);
    for (std::size_t i = 0; i < n; ++i)
      rho_soft[i] = std::sqrt(rho[i] * rho[i] + qfloor * qfloor);

    // Quantum force density in stress divergence form:
    //   f_a = sum_b (hbar^2/4 m_b) d_b [ d_a d_b rho - (d_a rho)(d_b rho)/rho ]
    // The first piece contracts to d_a of the kinetic-weighted Laplacian
    // because derivatives commute.
    std::vector<std::vector<double>> fq(dim), drho_ax(dim);
    if (g.boundary == Boundary::periodic) {
      Spectrum sr(g, std::span<const double>(rho));
      sr.lowpass(kCliffStrength, kCliffPower);
      for (std::size_t a = 0; a < dim; ++a) {
        fq[a] = sr.derivative_of_weighted_second(a, w);
        drho_ax[a] = sr.derivative(a);
      }
    } else {
      const auto lap = weighted_second_any(g, rho, w);
      for (std::size_t a = 0; a < dim; ++a) {
        fq[a] = fd_derivative(g, lap, a);
        drho_ax[a] = fd_derivative(g, rho, a);
      }
    }
    for (auto& f : fq)
      for (double& x : f) x *= 0.5;

    std::vector<double> tab(n);
    for (std::size_t a = 0; a < dim; ++a)
      for (std::size_t b = 0; b < dim; ++b) {
        const double cb = 0.5 * w[b];
        for (std::size_t i = 0; i < n; ++i)
          tab[i] = cb * drho_ax[a][i] * drho_ax[b][i] / rho_soft[i];
        auto dt_ab = filtered_deriv(tab, b);
        for (std::size_t i = 0; i < n; ++i) fq[a][i] -= dt_ab[i];
      }

    // The whole right-hand side, continuity included, is scaled by one
    // trust factor. Scaling only the force while continuity runs at
    // full speed breaks the Hamiltonian structure of the linearized
    // system across the fade and feeds a genuine exponential mode; a
    // common positive factor is a local rescaling of time, which keeps
    // the spectrum neutral, keeps stationary states exactly stationary,
    // and freezes the vacuum smoothly.
    std::vector<double> trust(n);
    for (std::size_t i = 0; i < n; ++i)
      trust[i] = log_taper(rho[i], trust_lo, trust_hi);

    drho.assign(n, 0.0);
    for (std::size_t b = 0; b < dim; ++b) {
      auto div = filtered_deriv(mom[b], b);
      for (std::size_t i = 0; i < n; ++i) drho[i] -= div[i];
    }
    for (std::size_t i = 0; i < n; ++i) drho[i] *= trust[i];

    std::vector<double> flux(n);
    for (std::size_t a = 0; a < dim; ++a) {
      auto& da = dmom[a];
      da.assign(n, 0.0);
      for (std::size_t b = 0; b < dim; ++b) {
        for (std::size_t i = 0; i < n; ++i)
          flux[i] = mom[a][i] * mom[b][i] / rho_soft[i];
        auto dflux = filtered_deriv(flux, b);
        for (std::size_t i = 0; i < n; ++i) da[i] -= dflux[i];
      }
      const double invm = 1.0 / params.mass_for_axis(a);
      for (std::size_t i = 0; i < n; ++i)
        da[i] = trust[i] *
                (da[i] + invm * (fq[a][i] - rho[i] * vgrad[a][i]));
    }
  }
};

}  // namespace detail

// One explicit RK4 step of the coupled continuity + force-law system in
// conservative variables (rho, rho*v), with spectral derivatives and the
// tail regularization described on HydroRhs.
//
// This integrator is retained as an independent cross-check of step_hydro
// over short horizons and as the only path for box-boundary grids. It is
// not suitable for long runs: the linearization of the pair (rho, rho*v)
// about a localized state has ripple modes that grow like
// exp(k |grad log rho| hbar t / 2m), so any tail region with a steep
// density profile pumps grid-scale noise at a rate no explicit filter can
// hold off indefinitely (measured growth matches that expression).
inline HydroState step_hydro_explicit(const HydroState& state,
                                      const PotentialSpec& V,
                                      const PhysicalParams& params, double dt) {
  if (!(dt > 0)) throw ConfigError("dt must be positive");
  const GridSpec& g = state.grid;
  params.validate_for_grid(g);
  V.validate(g);
  const std::size_t n = g.size();
  const std::size_t dim = g.dim();

  // Dispersion guard. The linearized quantum force propagates ripples of
  // wavenumber k at omega = hbar k^2 / 2m, and the RK4 stability region
  // covers the imaginary axis only up to 2*sqrt(2). The largest
  // representable k is pi/h on the spectral path and the FD Laplacian's
  // max eigenvalue is 4/h^2 on the box path.
  double omega_max = 0.0;
  for (std::size_t a = 0; a < dim; ++a) {
    const double h = g.spacing(a);
    const double k2 = g.boundary == Boundary::periodic
                          ? (std::numbers::pi / h) * (std::numbers::pi / h)
                          : 4.0 / (h * h);
    omega_max += params.hbar * k2 / (2.0 * params.mass_for_axis(a));
  }
  if (dt * omega_max > 2.5)
    throw NumericGuardError(
        "dt too large for grid dispersion stability; reduce dt below " +
        std::to_string(2.5 / omega_max));

  // CFL guard on the incoming velocity field. Points below the momentum
  // trust threshold are excluded: their velocities are quotient noise
  // and their fluxes are negligible, so they do not drive the stability
  // limit.
  const double cfl_floor =
      detail::HydroRhs::kMomentumTrustRel * field_max(state.rho);
  for (std::size_t a = 0; a < dim; ++a) {
    double vmax = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (state.velocity.defined[i] && state.rho[i] > cfl_floor)
        vmax = std::max(vmax, std::abs(state.velocity.comp[a][i]));
    if (vmax * dt / g.spacing(a) > 0.5)
      throw NumericGuardError("CFL number above 0.5; reduce dt");
  }

  detail::HydroRhs rhs(g, V, params);

  // Momentum is faded to zero below the trust band: velocities stored at
  // densities under ~1e-10 of the peak are quotient noise, and letting
  // them re-enter the advection flux feeds noise back into the bulk.
  std::vector<double> r0 = state.rho;
  const double rmax0 = field_max(r0);
  std::vector<std::vector<double>> m0(dim, std::vector<double>(n));
  for (std::size_t a = 0; a < dim; ++a)
    for (std::size_t i = 0; i < n; ++i) {
      const double v =
          state.velocity.defined[i] ? state.velocity.comp[a][i] : 0.0;
      m0[a][i] = state.rho[i] * v *
                 detail::log_taper(
                     state.rho[i],
                     detail::HydroRhs::kMomentumFloorRel * rmax0,
                     detail::HydroRhs::kMomentumTrustRel * rmax0);
    }

  auto axpy = [&](const std::vector<double>& x, double c,
                  const std::vector<double>& d) {
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] + c * d[i];
    return y;
  };

  std::vector<double> k1r, k2r, k3r, k4r;
  std::vector<std::vector<double>> k1m(dim), k2m(dim), k3m(dim), k4m(dim);
  rhs.eval(r0, m0, k1r, k1m);

  std::vector<double> rt = axpy(r0, 0.5 * dt, k1r);
  std::vector<std::vector<double>> mt(dim);
  for (std::size_t a = 0; a < dim; ++a) mt[a] = axpy(m0[a], 0.5 * dt, k1m[a]);
  rhs.eval(rt, mt, k2r, k2m);

  rt = axpy(r0, 0.5 * dt, k2r);
  for (std::size_t a = 0; a < dim; ++a) mt[a] = axpy(m0[a], 0.5 * dt, k2m[a]);
  rhs.eval(rt, mt, k3r, k3m);

  rt = axpy(r0, dt, k3r);
  for (std::size_t a = 0; a < dim; ++a) mt[a] = axpy(m0[a], dt, k3m[a]);
  rhs.eval(rt, mt, k4r, k4m);

  HydroState out;
  out.grid = g;
  out.time = state.time + dt;
  out.rho.resize(n);
  const double c = dt / 6.0;
  for (std::size_t i = 0; i < n; ++i)
    out.rho[i] = r0[i] + c * (k1r[i] + 2.0 * k2r[i] + 2.0 * k3r[i] + k4r[i]);
  std::vector<std::vector<double>> mout(dim, std::vector<double>(n));
  for (std::size_t a = 0; a < dim; ++a)
    for (std::size_t i = 0; i < n; ++i)
      mout[a][i] = m0[a][i] + c * (k1m[a][i] + 2.0 * k2m[a][i] +
                                   2.0 * k3m[a][i] + k4m[a][i]);

  // Keep the completed momentum inside the retained spectral band. The
  // right-hand side already passes every term through the cliff, but the
  // pointwise trust and quotient factors regenerate a little content
  // above it; draining that every step closes the loop. The density is
  // deliberately left unfiltered here: a global spectral multiply rings
  // into the exact-zero vacuum and deposits negative dust there, while
  // the trust scaling already freezes density tendencies below the
  // trust band, so unfiltered density stays nonnegative on its own.
  if (g.boundary == Boundary::periodic) {
    for (std::size_t a = 0; a < dim; ++a) {
      detail::Spectrum sm(g, std::span<const double>(mout[a]));
      sm.lowpass(detail::kCliffStrength, detail::kCliffPower);
      mout[a] = sm.real_inverse(std::move(sm.hat));
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    double r = out.rho[i];
    if (r < 0.0) {
      if (r < -1e-9)
        throw NumericGuardError("density went negative beyond tolerance");
      r = 0.0;
    }
    out.rho[i] = r;
  }
  // Rebuild velocities from the conserved pair, with a smooth cap at
  // 0.35 cells per step. Physical velocities in a resolved run sit well
  // below the 0.5 CFL guard, so the eighth-power knee leaves them
  // essentially untouched (relative error (v/vcap)^8 / 8), while
  // quotient junk in the low-density band saturates at a step-stable
  // value instead of compounding across steps.
  out.velocity = make_vector_field(g);
  out.velocity.defined = density_mask(out.rho);
  for (std::size_t a = 0; a < dim; ++a) {
    const double vcap = 0.35 * g.spacing(a) / dt;
    for (std::size_t i = 0; i < n; ++i)
      if (out.velocity.defined[i]) {
        const double v = mout[a][i] / out.rho[i];
        const double w = std::pow(std::abs(v) / vcap, 8.0);
        out.velocity.comp[a][i] = v / std::pow(1.0 + w, 0.125);
      }
  }
  return out;
}

namespace detail {

// Phase field of the complex representation psi = sqrt(rho) e^{i theta},
// integrated from m_a v_a = hbar d_a theta over a breadth-first spanning
// tree of the defined-velocity region (trapezoid rule per tree edge).
// Tree integration carries winding exactly: around a periodic direction
// or an interior node, closing edges may disagree with the tree value by
// multiples of 2*pi, which e^{i theta} cannot see when the circulation
// is quantized (the caller-verified precondition of the field step).
// Each connected component of the defined region is anchored at its own
// density peak with theta = 0; the hydrodynamic state does not determine
// the relative phase of disconnected components.
inline std::vector<double> tree_phase(const GridSpec& g,
                                      const std::vector<double>& rho,
                                      const VectorField& vel,
                                      const PhysicalParams& params) {
  const std::size_t n = g.size();
  std::vector<double> theta(n, 0.0);
  std::vector<char> seen(n, 0);

  std::vector<double> esc(g.dim());
  for (std::size_t a = 0; a < g.dim(); ++a)
    esc[a] = params.mass_for_axis(a) * g.spacing(a) / (2.0 * params.hbar);

  auto neighbor = [&](std::size_t i, std::size_t a, int dir, std::size_t& j) {
    auto mi = g.unravel(i);
    const std::size_t pts = g.axes[a].points;
    if (dir > 0) {
      if (mi[a] + 1 < pts)
        mi[a] += 1;
      else if (g.boundary == Boundary::periodic)
        mi[a] = 0;
      else
        return false;
    } else {
      if (mi[a] > 0)
        mi[a] -= 1;
      else if (g.boundary == Boundary::periodic)
        mi[a] = pts - 1;
      else
        return false;
    }
    j = g.ravel(mi);
    return true;
  };

  std::vector<std::size_t> queue;
  queue.reserve(n);
  for (;;) {
    std::size_t anchor = n;
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i)
      if (vel.defined[i] && !seen[i] && rho[i] > best) {
        best = rho[i];
        anchor = i;
      }
    if (anchor == n) break;
    seen[anchor] = 1;
    queue.clear();
    queue.push_back(anchor);
    for (std::size_t qi = 0; qi < queue.size(); ++qi) {
      const std::size_t i = queue[qi];
      for (std::size_t a = 0; a < g.dim(); ++a)
        for (int dir : {1, -1}) {
          std::size_t j;
          if (!neighbor(i, a, dir, j)) continue;
          if (!vel.defined[j] || seen[j]) continue;
          const double step = esc[a] * (vel.comp[a][i] + vel.comp[a][j]);
          theta[j] = theta[i] + (dir > 0 ? step : -step);
          seen[j] = 1;
          queue.push_back(j);
        }
    }
  }

  // Extend the phase into sub-threshold cells by value propagation (zero
  // increments: no trusted momentum there). Leaving the exterior at a
  // fixed phase instead would plant a growing phase kink at the mask edge
  // once the interior phase drifts, and the spectral kinetic step rings
  // such a kink back into the interior. The extension runs strictly after
  // the defined-region integration, so a genuine low-density saddle
  // between density lobes always carries the lobes' phase relation and a
  // vacuum shortcut never does.
  queue.clear();
  for (std::size_t i = 0; i < n; ++i)
    if (seen[i]) queue.push_back(i);
  for (std::size_t qi = 0; qi < queue.size(); ++qi) {
    const std::size_t i = queue[qi];
    for (std::size_t a = 0; a < g.dim(); ++a)
      for (int dir : {1, -1}) {
        std::size_t j;
        if (!neighbor(i, a, dir, j)) continue;
        if (seen[j]) continue;
        theta[j] = theta[i];
        seen[j] = 1;
        queue.push_back(j);
      }
  }
  return theta;
}

// One spectral least-squares correction to the tree phase on periodic
// grids. The residual velocity of psi relative to the stored field is
// small (trapezoid path error, O(h^2)), single-valued and curl-free, so
// its potential solves a Poisson equation exactly in the spectral basis;
// applying e^{i dtheta} removes the accumulated path error without
// touching winding. Residuals are taken on defined cells only and taper
// with the density weight, so the weightless exterior cannot pollute it.
inline void phase_refine(const GridSpec& g, const std::vector<double>& rho,
                         const VectorField& vel, const PhysicalParams& params,
                         std::vector<cdouble>& psi) {
  const std::size_t n = g.size();
  const std::size_t dim = g.dim();

  std::vector<std::vector<double>> ks1, ks2;
  for (std::size_t a = 0; a < dim; ++a) {
    ks1.push_back(wavenumbers(g, a, true));
    ks2.push_back(wavenumbers(g, a, false));
  }

  // divergence of the masked residual m_a (v_a - v_psi,a) / hbar
  std::vector<cdouble> src(n, cdouble(0.0, 0.0));
  for (std::size_t a = 0; a < dim; ++a) {
    std::vector<cdouble> dpsi(psi.begin(), psi.end());
    fft_forward(g, dpsi.data());
    for_each_mode(g, ks1, [&](std::size_t i, const std::array<double, 3>& k) {
      dpsi[i] *= cdouble(0.0, k[a]);
    });
    fft_inverse(g, dpsi.data());
    const double mscale = params.mass_for_axis(a) / params.hbar;
    std::vector<double> res(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      if (!vel.defined[i]) continue;
      const double r2 = std::norm(psi[i]);
      if (r2 <= 0.0) continue;
      const double vpsi =
          params.hbar / params.mass_for_axis(a) *
          (dpsi[i] * std::conj(psi[i])).imag() / r2;
      res[i] = mscale * (vel.comp[a][i] - vpsi);
    }
    std::vector<cdouble> rhat(res.begin(), res.end());
    fft_forward(g, rhat.data());
    for_each_mode(g, ks1, [&](std::size_t i, const std::array<double, 3>& k) {
      src[i] += cdouble(0.0, k[a]) * rhat[i];
    });
  }

  // dtheta_hat = -div_hat / |k|^2, zero mean
  for_each_mode(g, ks2, [&](std::size_t i, const std::array<double, 3>& k) {
    double k2 = 0.0;
    for (std::size_t a = 0; a < dim; ++a) k2 += k[a] * k[a];
    src[i] = k2 > 0.0 ? -src[i] / k2 : cdouble(0.0, 0.0);
  });
  fft_inverse(g, src.data());
  for (std::size_t i = 0; i < n; ++i)
    psi[i] *= std::polar(1.0, src[i].real());
}

}  // namespace detail

// Complex representation psi = sqrt(rho) e^{i theta} of a hydrodynamic
// state. When the state carries a continuation cache that still decomposes
// to exactly its stored fields, that field is returned directly: it holds
// the deep-tail phase that (rho, velocity) cannot represent. Otherwise
// theta is integrated from the velocity field over a spanning tree.
// Requires the circulation to be quantized (the field-step precondition);
// disconnected density components get independent zero anchors.
inline WaveState hydro_to_wave(const HydroState& state,
                               const PhysicalParams& params) {
  params.validate_for_grid(state.grid);
  const std::size_t n = state.grid.size();

  if (state.psi.size() == n) {
    WaveState cached;
    cached.grid = state.grid;
    cached.time = state.time;
    cached.psi = state.psi;
    const HydroState check = madelung_decompose(cached, params);
    const double rtol = 1e-12 * field_max(state.rho);
    bool ok = true;
    for (std::size_t i = 0; ok && i < n; ++i)
      if (std::abs(check.rho[i] - state.rho[i]) > rtol) ok = false;
    double vscale = 1.0;
    for (std::size_t a = 0; ok && a < state.grid.dim(); ++a)
      for (std::size_t i = 0; i < n; ++i)
        if (state.velocity.defined[i])
          vscale = std::max(vscale, std::abs(state.velocity.comp[a][i]));
    const double vtol = 1e-10 * vscale;
    for (std::size_t a = 0; ok && a < state.grid.dim(); ++a)
      for (std::size_t i = 0; ok && i < n; ++i) {
        const double vc =
            check.velocity.defined[i] ? check.velocity.comp[a][i] : 0.0;
        const double vs =
            state.velocity.defined[i] ? state.velocity.comp[a][i] : 0.0;
        if (std::abs(vc - vs) > vtol) ok = false;
      }
    if (ok) return cached;
  }

  WaveState out;
  out.grid = state.grid;
  out.time = state.time;
  out.psi.resize(n);

  std::vector<double> amp(n);
  for (std::size_t i = 0; i < n; ++i) {
    double r = state.rho[i];
    if (r < 0.0) {
      if (r < -1e-9)
        throw NumericGuardError("density went negative beyond tolerance");
      r = 0.0;
    }
    amp[i] = std::sqrt(r);
  }

  const auto theta =
      detail::tree_phase(state.grid, state.rho, state.velocity, params);
  for (std::size_t i = 0; i < n; ++i)
    out.psi[i] = std::polar(amp[i], theta[i]);
  if (state.grid.boundary == Boundary::periodic)
    detail::phase_refine(state.grid, state.rho, state.velocity, params,
                         out.psi);
  return out;
}

// Advances the coupled system by dt: rho by the continuity equation
// d rho/dt = -sum_k div_k(rho v_k), v so that m_j a_j = -grad_j[Q + V]
// with a_j the material derivative. The advance is carried through the
// complex representation: psi = sqrt(rho) e^{i theta} is rebuilt by
// spanning-tree phase integration, advanced by one Strang split-operator
// step (whose amplitude-phase flow is exactly the continuity and force
// equations above), and decomposed back. Evolving the pair (rho, rho v)
// directly is exponentially ill-conditioned: ripple modes on a localized
// state grow like exp(k |grad log rho| hbar t / 2m) in the density tail,
// which no explicit filtering holds off over long runs (step_hydro_explicit
// retains that integrator for short-horizon cross-checks). The unitary
// frame keeps norm conservation and density positivity exact and the
// quantization condition intact by construction.
inline HydroState step_hydro(const HydroState& state, const PotentialSpec& V,
                             const PhysicalParams& params, double dt) {
  if (!(dt > 0)) throw ConfigError("dt must be positive");
  const GridSpec& g = state.grid;
  params.validate_for_grid(g);
  V.validate(g);
  if (g.boundary != Boundary::periodic)
    throw ConfigError(
        "step_hydro requires a periodic grid (realize walls as barrier "
        "potentials); step_hydro_explicit handles box boundaries");

  // Stability guard on the incoming velocity field.
  for (std::size_t a = 0; a < g.dim(); ++a) {
    double vmax = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (state.velocity.defined[i])
        vmax = std::max(vmax, std::abs(state.velocity.comp[a][i]));
    if (vmax * dt / g.spacing(a) > 0.5)
      throw NumericGuardError("CFL number above 0.5; reduce dt");
  }

  const WaveState w = hydro_to_wave(state, params);
  const WaveState w2 = evolve_schrodinger(w, V, params, dt, 1);
  return madelung_decompose(w2, params);
}

// d theta / dt = sum_k { (hbar/2m_k)(d_k^2 A)/A - (m_k/2 hbar)|v_k|^2 }
//                - V/hbar,
// i.e. -(Q + V)/hbar minus the kinetic phase term. theta must be
// consistent with the velocity field it claims to describe.
inline ScalarField phase_time_derivative(const HydroState& state,
                                         const ScalarField& theta,
                                         const PotentialSpec& V,
                                         const PhysicalParams& params) {
  const GridSpec& g = state.grid;
  params.validate_for_grid(g);
  if (theta.grid != g) throw ConfigError("theta grid mismatch");

  // consistency: (hbar/m_a) d_a theta ~ v_a where defined. Differences of
  // neighboring phases are wrapped to (-pi, pi] first so a winding phase
  // (plane wave) checks out.
  double vscale = 1e-6;
  for (std::size_t a = 0; a < g.dim(); ++a)
    for (std::size_t i = 0; i < g.size(); ++i)
      if (state.velocity.defined[i])
        vscale = std::max(vscale, std::abs(state.velocity.comp[a][i]));
  auto wrap = [](double d) {
    return std::remainder(d, 2.0 * std::numbers::pi);
  };
  for (std::size_t a = 0; a < g.dim(); ++a) {
    const double scale = params.hbar / params.mass_for_axis(a);
    const double inv2h = 1.0 / (2.0 * g.spacing(a));
    detail::for_each_line(g, a, [&](std::size_t base, std::size_t s,
                                    std::size_t cnt) {
      auto th = [&](std::size_t j) { return theta.values[base + j * s]; };
      for (std::size_t j = 0; j < cnt; ++j) {
        const std::size_t i = base + j * s;
        if (!state.velocity.defined[i]) continue;
        double dth;
        if (j > 0 && j + 1 < cnt)
          dth = (wrap(th(j + 1) - th(j)) + wrap(th(j) - th(j - 1))) * inv2h;
        else if (g.boundary == Boundary::periodic)
          dth = (wrap(th((j + 1) % cnt) - th(j)) +
                 wrap(th(j) - th((j + cnt - 1) % cnt))) *
                inv2h;
        else
          continue;  // box edge: one-sided check skipped
        if (std::abs(scale * dth - state.velocity.comp[a][i]) >
            1e-2 * vscale + 1e-6)
          throw ConfigError("theta is not consistent with the velocity field");
      }
    });
  }

  ScalarField rho_field{g, state.rho};
  const ScalarField q = quantum_potential(rho_field, params);
  const ScalarField vf = V.evaluate(g, params);
  ScalarField out = make_scalar_field(g);
  for (std::size_t i = 0; i < g.size(); ++i) {
    double kin = 0.0;
    for (std::size_t a = 0; a < g.dim(); ++a) {
      const double v = state.velocity.defined[i] ? state.velocity.comp[a][i] : 0.0;
      kin += 0.5 * params.mass_for_axis(a) * v * v;
    }
    out.values[i] = -(q.values[i] + vf.values[i] + kin) / params.hbar;
  }
  return out;
}

}  // namespace miw
