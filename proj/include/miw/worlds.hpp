#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "calculus.hpp"
#include "field.hpp"
#include "hydro.hpp"
#include "params.hpp"
#include "potential.hpp"
#include "rng.hpp"
#include "spectral.hpp"

namespace miw {

// How to turn a cloud of world positions into a smooth density on a grid.
struct DensityEstimatorSpec {
  enum class Kind { gaussian_kernel, histogram };
  Kind kind = Kind::gaussian_kernel;
  double bandwidth = 0.0;  // > 0 explicit; <= 0 means automatic scaling
  std::size_t bins = 64;   // histogram resolution per axis

  static DensityEstimatorSpec make_gaussian(double bw = 0.0) {
    DensityEstimatorSpec s;
    s.kind = Kind::gaussian_kernel;
    s.bandwidth = bw;
    return s;
  }

  static DensityEstimatorSpec make_histogram(std::size_t bins) {
    DensityEstimatorSpec s;
    s.kind = Kind::histogram;
    s.bins = bins;
    return s;
  }

  void validate() const {
    if (kind == Kind::histogram && bins < 8)
      throw ConfigError("histogram estimator needs at least 8 bins per axis");
  }
};

// A finite ensemble of worlds: one configuration-space point and velocity
// per world. Positions are continuous (not snapped to the grid); the grid
// records the domain and its boundary semantics.
struct WorldEnsemble {
  GridSpec grid;
  std::vector<std::array<double, 3>> pos;
  std::vector<std::array<double, 3>> vel;
  double time = 0.0;
  std::uint64_t boundary_events = 0;
  std::vector<std::string> diagnostics;

  std::size_t count() const { return pos.size(); }

  void validate() const {
    grid.validate();
    if (pos.size() != vel.size())
      throw ConfigError("ensemble position/velocity lists must match");
    if (pos.size() < 2) throw ConfigError("an ensemble needs at least 2 worlds");
  }

  void note(const std::string& msg) {
    for (const auto& d : diagnostics)
      if (d == msg) return;
    diagnostics.push_back(msg);
  }
};

namespace detail {

// Index of the grid cell that owns a continuous coordinate. Periodic grids
// have nodes at lo + i*h (cell centered on the node); box grids have cells
// [lo + i*h, lo + (i+1)*h) centered at lo + (i+0.5)*h.
inline std::size_t owning_cell(const GridSpec& g, const std::array<double, 3>& x) {
  std::array<std::size_t, 3> mi{};
  for (std::size_t a = 0; a < g.dim(); ++a) {
    const double h = g.spacing(a);
    const auto n = static_cast<long>(g.axes[a].points);
    double s = (x[a] - g.axes[a].lo) / h;
    long i;
    if (g.boundary == Boundary::periodic) {
      i = static_cast<long>(std::floor(s + 0.5)) % n;
      if (i < 0) i += n;
    } else {
      i = static_cast<long>(std::floor(s));
      i = std::clamp(i, long{0}, n - 1);
    }
    mi[a] = static_cast<std::size_t>(i);
  }
  return g.ravel(mi);
}

// Multilinear interpolation stencil: up to 2^dim corners with weights.
// Periodic wraps; box clamps to the outermost node (constant beyond the
// last cell center).
struct InterpStencil {
  std::array<std::size_t, 8> idx{};
  std::array<double, 8> w{};
  std::size_t corners = 0;
};

inline void interp_stencil(const GridSpec& g, const std::array<double, 3>& x,
                           InterpStencil& st) {
  const std::size_t dim = g.dim();
  std::array<std::size_t, 3> i0{}, i1{};
  std::array<double, 3> f{};
  for (std::size_t a = 0; a < dim; ++a) {
    const double h = g.spacing(a);
    const auto n = static_cast<long>(g.axes[a].points);
    const double off = g.boundary == Boundary::box ? 0.5 : 0.0;
    double s = (x[a] - g.axes[a].lo) / h - off;
    if (g.boundary == Boundary::periodic) {
      double base = std::floor(s);
      long i = static_cast<long>(base) % n;
      if (i < 0) i += n;
      i0[a] = static_cast<std::size_t>(i);
      i1[a] = static_cast<std::size_t>((i + 1) % n);
      f[a] = s - base;
    } else {
      if (s <= 0.0) {
        i0[a] = 0;
        i1[a] = 0;
        f[a] = 0.0;
      } else if (s >= static_cast<double>(n - 1)) {
        i0[a] = static_cast<std::size_t>(n - 1);
        i1[a] = i0[a];
        f[a] = 0.0;
      } else {
        double base = std::floor(s);
        i0[a] = static_cast<std::size_t>(base);
        i1[a] = i0[a] + 1;
        f[a] = s - base;
      }
    }
  }
  st.corners = std::size_t{1} << dim;
  std::array<std::size_t, 3> mi{};
  for (std::size_t c = 0; c < st.corners; ++c) {
    double weight = 1.0;
    for (std::size_t a = 0; a < dim; ++a) {
      const bool hi = (c >> a) & 1u;
      mi[a] = hi ? i1[a] : i0[a];
      weight *= hi ? f[a] : 1.0 - f[a];
    }
    st.idx[c] = g.ravel(mi);
    st.w[c] = weight;
  }
}

inline double interp_field(const GridSpec& g, std::span<const double> v,
                           const std::array<double, 3>& x) {
  InterpStencil st;
  interp_stencil(g, x, st);
  double s = 0.0;
  for (std::size_t c = 0; c < st.corners; ++c) s += st.w[c] * v[st.idx[c]];
  return s;
}

// Interpolation that ignores masked corners (weights renormalized over the
// defined ones). Returns 0 when every corner is masked.
inline double interp_field_masked(const GridSpec& g, std::span<const double> v,
                                  std::span<const std::uint8_t> defined,
                                  const std::array<double, 3>& x) {
  InterpStencil st;
  interp_stencil(g, x, st);
  double s = 0.0, wsum = 0.0;
  for (std::size_t c = 0; c < st.corners; ++c) {
    if (!defined[st.idx[c]]) continue;
    s += st.w[c] * v[st.idx[c]];
    wsum += st.w[c];
  }
  return wsum > 0.0 ? s / wsum : 0.0;
}

// Cloud-in-cell deposit: each world spreads unit mass over its multilinear
// stencil. Output is a density (mass / cell volume), unnormalized.
inline std::vector<double> cic_deposit(const GridSpec& g,
                                       const std::vector<std::array<double, 3>>& pts) {
  std::vector<double> f(g.size(), 0.0);
  InterpStencil st;
  for (const auto& p : pts) {
    interp_stencil(g, p, st);
    for (std::size_t c = 0; c < st.corners; ++c) f[st.idx[c]] += st.w[c];
  }
  const double scale = 1.0 / (static_cast<double>(pts.size()) * g.cell_volume());
  for (double& v : f) v *= scale;
  return f;
}

// Separable truncated-Gaussian convolution for box grids. The kernel is
// renormalized against the in-domain sum at every point, so mass neither
// leaks through the walls nor piles up at them.
inline void box_gaussian_smooth(const GridSpec& g, std::vector<double>& f,
                                std::span<const double> sigma) {
  for (std::size_t a = 0; a < g.dim(); ++a) {
    const double h = g.spacing(a);
    if (!(sigma[a] > 0.0)) continue;
    const auto reach = static_cast<long>(std::ceil(5.0 * sigma[a] / h));
    std::vector<double> kern(static_cast<std::size_t>(2 * reach + 1));
    for (long j = -reach; j <= reach; ++j)
      kern[static_cast<std::size_t>(j + reach)] =
          std::exp(-0.5 * (j * h) * (j * h) / (sigma[a] * sigma[a]));
    std::vector<double> out(f.size());
    for_each_line(g, a, [&](std::size_t base, std::size_t s, std::size_t n) {
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0, norm = 0.0;
        const long lo = std::max<long>(0, static_cast<long>(i) - reach);
        const long hi = std::min<long>(static_cast<long>(n) - 1,
                                       static_cast<long>(i) + reach);
        for (long j = lo; j <= hi; ++j) {
          const double k =
              kern[static_cast<std::size_t>(j - static_cast<long>(i) + reach)];
          acc += k * f[base + static_cast<std::size_t>(j) * s];
          norm += k;
        }
        out[base + i * s] = acc / norm;
      }
    });
    f.swap(out);
  }
}

inline void gaussian_smooth(const GridSpec& g, std::vector<double>& f,
                            std::span<const double> sigma) {
  if (g.boundary == Boundary::periodic)
    spectral_gaussian_smooth(g, f, sigma);
  else
    box_gaussian_smooth(g, f, sigma);
}

// Per-axis cloud width: the smaller of the sample deviation and IQR/1.349
// (equal for a Gaussian cloud; the quartile version resists heavy tails).
inline std::vector<double> robust_spread(const GridSpec& g,
                                         const std::vector<std::array<double, 3>>& pts) {
  const std::size_t dim = g.dim();
  const auto n = static_cast<double>(pts.size());
  std::vector<double> spread(dim);
  std::vector<double> coord(pts.size());
  for (std::size_t a = 0; a < dim; ++a) {
    double mean = 0.0;
    for (const auto& p : pts) mean += p[a];
    mean /= n;
    double var = 0.0;
    for (const auto& p : pts) var += (p[a] - mean) * (p[a] - mean);
    var /= n;
    double dev = std::sqrt(var);
    for (std::size_t j = 0; j < pts.size(); ++j) coord[j] = pts[j][a];
    std::sort(coord.begin(), coord.end());
    const double iqr = coord[(coord.size() * 3) / 4] - coord[coord.size() / 4];
    if (iqr > 0.0) dev = std::min(dev, iqr / 1.349);
    if (!(dev > 0.0)) dev = g.spacing(a);
    spread[a] = dev;
  }
  return spread;
}

// Kernel widths for the automatic bandwidth: per-axis cloud width scaled
// by (4/(D+2))^(1/(D+4)) * n^(-1/(D+4)).
inline std::vector<double> auto_bandwidth(const GridSpec& g,
                                          const std::vector<std::array<double, 3>>& pts) {
  const std::size_t dim = g.dim();
  const auto n = static_cast<double>(pts.size());
  const double d = static_cast<double>(dim);
  const double factor = std::pow(4.0 / (d + 2.0), 1.0 / (d + 4.0)) *
                        std::pow(n, -1.0 / (d + 4.0));
  std::vector<double> bw = robust_spread(g, pts);
  for (std::size_t a = 0; a < dim; ++a) bw[a] *= factor;
  return bw;
}

}  // namespace detail

// Draw an ensemble from |Psi|^2 by inverse-CDF over grid cells (uniform
// jitter within the chosen cell), with each world's velocity set to the
// local guidance value. Deterministic for a fixed seed.
inline WorldEnsemble sample_worlds(const WaveState& state, std::size_t count,
                                   std::uint64_t seed,
                                   const PhysicalParams& params) {
  params.validate_for_grid(state.grid);
  state.validate();
  if (count < 2) throw ConfigError("an ensemble needs at least 2 worlds");
  const GridSpec& g = state.grid;
  const std::size_t n = g.size();
  const std::size_t dim = g.dim();

  std::vector<double> rho(n);
  for (std::size_t i = 0; i < n; ++i) rho[i] = std::norm(state.psi[i]);
  const auto mask = density_mask(rho);
  double total = 0.0, masked = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += rho[i];
    if (!mask[i]) masked += rho[i];
  }
  if (masked > 1e-6 * total)
    throw ConfigError(
        "cannot assign world velocities: more than 1e-6 of the mass sits "
        "below the node threshold");

  const HydroState hydro = madelung_decompose(state, params);

  std::vector<double> cdf(n);
  double run = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    run += rho[i];
    cdf[i] = run;
  }

  WorldEnsemble ens;
  ens.grid = g;
  ens.time = state.time;
  ens.pos.resize(count);
  ens.vel.resize(count);

  Rng rng(seed);
  std::array<std::size_t, 3> mi{};
  for (std::size_t w = 0; w < count; ++w) {
    std::size_t cell = 0;
    for (int tries = 0;; ++tries) {
      const double u = rng.uniform() * total;
      cell = static_cast<std::size_t>(
          std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
      if (cell >= n) cell = n - 1;
      if (mask[cell]) break;
      if (tries > 1000)
        throw NumericGuardError("world sampling failed to land on defined cells");
    }
    mi = g.unravel(cell);
    std::array<double, 3> x{};
    for (std::size_t a = 0; a < dim; ++a) {
      const double h = g.spacing(a);
      const double u = rng.uniform();
      double c = g.coord(a, mi[a]) + (u - 0.5) * h;
      if (g.boundary == Boundary::periodic) {
        const double lo = g.axes[a].lo, L = g.length(a);
        if (c < lo) c += L;
        if (c >= lo + L) c -= L;
      }
      x[a] = c;
    }
    ens.pos[w] = x;
    std::array<double, 3> v{};
    for (std::size_t a = 0; a < dim; ++a)
      v[a] = detail::interp_field_masked(g, hydro.velocity.comp[a],
                                         hydro.velocity.defined, x);
    ens.vel[w] = v;
  }
  return ens;
}

// Normalized smooth density estimate of an ensemble on a grid.
inline ScalarField estimate_density(const WorldEnsemble& ens,
                                    const DensityEstimatorSpec& est,
                                    const GridSpec& grid) {
  ens.validate();
  est.validate();
  grid.validate();
  ScalarField out = make_scalar_field(grid);
  const std::size_t dim = grid.dim();

  if (est.kind == DensityEstimatorSpec::Kind::histogram) {
    // Coarse counting bins, mapped back onto the grid piecewise-constant.
    const std::size_t bins = est.bins;
    std::size_t nb = 1;
    for (std::size_t a = 0; a < dim; ++a) nb *= bins;
    std::vector<double> counts(nb, 0.0);
    for (const auto& p : ens.pos) {
      std::size_t idx = 0;
      for (std::size_t a = 0; a < dim; ++a) {
        const double H = grid.length(a) / static_cast<double>(bins);
        auto b = static_cast<long>(std::floor((p[a] - grid.axes[a].lo) / H));
        b = std::clamp(b, long{0}, static_cast<long>(bins) - 1);
        idx = idx * bins + static_cast<std::size_t>(b);
      }
      counts[idx] += 1.0;
    }
    std::array<std::size_t, 3> mi{};
    for (std::size_t i = 0; i < grid.size(); ++i) {
      mi = grid.unravel(i);
      std::size_t idx = 0;
      for (std::size_t a = 0; a < dim; ++a) {
        const double H = grid.length(a) / static_cast<double>(bins);
        auto b = static_cast<long>(
            std::floor((grid.coord(a, mi[a]) - grid.axes[a].lo) / H));
        b = std::clamp(b, long{0}, static_cast<long>(bins) - 1);
        idx = idx * bins + static_cast<std::size_t>(b);
      }
      out.values[i] = counts[idx];
    }
  } else {
    const std::vector<double> bw =
        est.bandwidth > 0.0 ? std::vector<double>(dim, est.bandwidth)
                            : detail::auto_bandwidth(grid, ens.pos);
    out.values = detail::cic_deposit(grid, ens.pos);
    detail::gaussian_smooth(grid, out.values, bw);
    // Band-limited smoothing of a spiky deposit can undershoot zero by a
    // sliver; the estimate is a density, so clip before renormalizing.
    for (double& v : out.values) v = std::max(v, 0.0);
  }

  double mass = 0.0;
  for (double v : out.values) mass += v;
  mass *= grid.cell_volume();
  if (!(mass > 0.0))
    throw NumericGuardError("density estimate vanished everywhere");
  const double inv = 1.0 / mass;
  for (double& v : out.values) v *= inv;
  return out;
}

// Quantum force of an estimated density. Differs from the exact-field
// version in two ways that matter when rho comes from finitely many worlds:
//  - the amplitude gets a smooth additive floor (1e-9 of the peak) before
//    the square root, so cells the estimator clipped to exactly zero do not
//    put kinks under the spectral derivatives (their ringing otherwise
//    swamps the whole grid);
//  - the quotient is weighted by a statistical trust ramp: full strength
//    where the estimate rests on many worlds per kernel volume, fading
//    smoothly to zero at the `support` floor and zero beyond it. The cells
//    near the floor carry order-one relative sampling noise, and a second
//    derivative turns that noise into force spikes; extrapolating such a
//    cell outward would feed one noisy value to every outlying world, so
//    the force is switched off there instead of guessed.
namespace detail {

// Raw force quotient of the regularized amplitude, and the trust ramp, as
// separate fields. The quotient is defined on every cell (the additive
// floor keeps the division finite); the trust field says how much of it
// rests on actual statistics.
inline void quotient_force_parts(const ScalarField& rho,
                                 const PhysicalParams& params, double support,
                                 VectorField& q, std::vector<double>& trust) {
  const GridSpec& g = rho.grid;
  params.validate_for_grid(g);
  const std::size_t n = g.size();
  const double eps = 1e-9 * field_max(rho.values);
  std::vector<double> amp(n), reg(n);
  for (std::size_t i = 0; i < n; ++i) {
    reg[i] = std::max(rho.values[i], 0.0) + eps;
    amp[i] = std::sqrt(reg[i]);
  }
  const auto w = kinetic_weights(g, params);
  const auto ka = weighted_second_any(g, amp, w);

  constexpr double kTrustSpan = 6.0;  // ramp tops out at this many floors
  trust.assign(n, 1.0);
  if (support > 0.0) {
    const double lo = support, hi = kTrustSpan * support;
    for (std::size_t i = 0; i < n; ++i) {
      const double t =
          std::clamp((rho.values[i] - lo) / (hi - lo), 0.0, 1.0);
      trust[i] = t * t * (3.0 - 2.0 * t);
    }
  }

  q = make_vector_field(g);
  for (std::size_t i = 0; i < n; ++i)
    q.defined[i] = rho.values[i] >= support ? 1 : 0;
  bool any = false;
  for (std::size_t i = 0; i < n; ++i) any = any || q.defined[i];
  if (!any) q.defined.assign(n, 1);
  for (std::size_t a = 0; a < g.dim(); ++a) {
    const auto dka = deriv_any(g, ka, a);
    const auto damp = deriv_any(g, amp, a);
    for (std::size_t i = 0; i < n; ++i)
      q.comp[a][i] = (amp[i] * dka[i] - ka[i] * damp[i]) / reg[i];
  }
}

}  // namespace detail

// Quantum force of an estimated density. Differs from the exact-field
// version in two ways that matter when rho comes from finitely many worlds:
//  - the amplitude gets a smooth additive floor (1e-9 of the peak) before
//    the square root, so cells the estimator clipped to exactly zero do not
//    put kinks under the spectral derivatives (their ringing otherwise
//    swamps the whole grid);
//  - the quotient is weighted by a statistical trust ramp: full strength
//    where the estimate rests on many worlds per kernel volume, fading
//    smoothly to zero at the `support` floor and zero beyond it. The cells
//    near the floor carry order-one relative sampling noise, and a second
//    derivative turns that noise into force spikes; extrapolating such a
//    cell outward would feed one noisy value to every outlying world, so
//    the force is switched off there instead of guessed.
inline VectorField ensemble_quantum_force(const ScalarField& rho,
                                          const PhysicalParams& params,
                                          double support) {
  VectorField q;
  std::vector<double> trust;
  detail::quotient_force_parts(rho, params, support, q, trust);
  for (std::size_t a = 0; a < rho.grid.dim(); ++a)
    for (std::size_t i = 0; i < rho.values.size(); ++i) q.comp[a][i] *= trust[i];
  return q;
}

namespace detail {

// Per-axis kernel widths an estimator spec resolves to for a given cloud.
inline std::vector<double> estimator_bandwidth(const DensityEstimatorSpec& est,
                                               const GridSpec& g,
                                               const std::vector<std::array<double, 3>>& pts) {
  if (est.kind == DensityEstimatorSpec::Kind::histogram) {
    std::vector<double> bw(g.dim());
    for (std::size_t a = 0; a < g.dim(); ++a)
      bw[a] = g.length(a) / static_cast<double>(est.bins);
    return bw;
  }
  if (est.bandwidth > 0.0) return std::vector<double>(g.dim(), est.bandwidth);
  return auto_bandwidth(g, pts);
}

// Density below which the estimate averages fewer than one world per
// kernel volume, i.e. where the continuum approximation has no support.
inline double support_floor(const DensityEstimatorSpec& est, const GridSpec& g,
                            const std::vector<std::array<double, 3>>& pts) {
  const auto bw = estimator_bandwidth(est, g, pts);
  double vol = 1.0;
  for (std::size_t a = 0; a < g.dim(); ++a)
    vol *= est.kind == DensityEstimatorSpec::Kind::histogram
               ? bw[a]
               : std::sqrt(2.0 * std::numbers::pi) * bw[a];
  return 1.0 / (static_cast<double>(pts.size()) * vol);
}

// Acceleration on the grid from an estimated density: a_a = (f_Q,a - d_a V)/m_a.
// The estimated quantum force is coarse-grained before use: a mass-weighted
// average over a window tied to the cloud's own width. Three facts force
// this design:
//  - the raw quotient carries order-one noise at the kernel scale (a second
//    derivative of a few-percent density ripple); its wells are deep enough
//    to trap slow worlds and freeze the ensemble. Tying the window to the
//    kernel width does not help: the kernel shrinks with the ensemble size
//    and the surviving noise then grows with it. The cloud width is the
//    scale on which the continuum force actually varies, and averaging
//    there kills the noise at every ensemble size while passing smooth
//    profiles through (linear pieces are unchanged by a Gaussian average).
//  - the window must weight by estimated mass, not just membership: in the
//    sparse shell the estimate degenerates into separated kernel bumps
//    whose quotient rectifies into a large spurious outward push (isolated
//    bumps repel), strong enough to eject tail worlds one after another.
//    Mass weighting buries that shell under the bulk, and the shell
//    inherits the interior's clean force instead of its own artifacts.
//  - averaging without the weight would also blend the zeroed exterior
//    into the support region and fake an inward force at the packet edge.
// The result keeps the trust fade (to zero outside the supported region),
// and the potential term is analytic and stays exact.
inline VectorField accel_field(const ScalarField& rho, const PotentialSpec& V,
                               const PhysicalParams& params, double support,
                               const std::vector<double>& cloud_spread) {
  const GridSpec& g = rho.grid;
  VectorField acc;
  std::vector<double> trust;
  quotient_force_parts(rho, params, support, acc, trust);

  std::vector<double> fw(g.dim());
  bool smoothable = true;
  for (std::size_t a = 0; a < g.dim(); ++a) {
    fw[a] = 1.2 * cloud_spread[a];
    if (!(fw[a] > g.spacing(a))) smoothable = false;
  }
  if (smoothable) {
    std::vector<double> weight(rho.values.size());
    for (std::size_t i = 0; i < weight.size(); ++i)
      weight[i] = std::max(rho.values[i], 0.0) * trust[i];
    std::vector<double> den = weight;
    gaussian_smooth(g, den, fw);
    const double den_floor = 1e-12 * field_max(den);
    for (std::size_t a = 0; a < g.dim(); ++a) {
      for (std::size_t i = 0; i < acc.comp[a].size(); ++i)
        acc.comp[a][i] *= weight[i];
      gaussian_smooth(g, acc.comp[a], fw);
      for (std::size_t i = 0; i < acc.comp[a].size(); ++i)
        acc.comp[a][i] =
            den[i] > den_floor ? acc.comp[a][i] / den[i] * trust[i] : 0.0;
    }
  } else {
    for (std::size_t a = 0; a < g.dim(); ++a)
      for (std::size_t i = 0; i < acc.comp[a].size(); ++i)
        acc.comp[a][i] *= trust[i];
  }

  const auto dv = potential_gradient(V, g, params);
  for (std::size_t a = 0; a < g.dim(); ++a) {
    const double invm = 1.0 / params.mass_for_axis(a);
    for (std::size_t i = 0; i < rho.values.size(); ++i)
      acc.comp[a][i] = (acc.comp[a][i] - dv[a][i]) * invm;
  }
  return acc;
}

// Wrap (periodic) or reflect (box) a position into the domain, flipping the
// reflected velocity component. Returns the number of boundary events.
inline std::uint64_t apply_boundary(const GridSpec& g, std::array<double, 3>& x,
                                    std::array<double, 3>& v) {
  std::uint64_t events = 0;
  for (std::size_t a = 0; a < g.dim(); ++a) {
    const double lo = g.axes[a].lo, hi = g.axes[a].hi, L = hi - lo;
    if (g.boundary == Boundary::periodic) {
      while (x[a] < lo) {
        x[a] += L;
        ++events;
      }
      while (x[a] >= hi) {
        x[a] -= L;
        ++events;
      }
    } else {
      for (int guard = 0; guard < 64; ++guard) {
        if (x[a] < lo) {
          x[a] = 2.0 * lo - x[a];
          v[a] = -v[a];
          ++events;
        } else if (x[a] > hi) {
          x[a] = 2.0 * hi - x[a];
          v[a] = -v[a];
          ++events;
        } else {
          break;
        }
      }
    }
  }
  return events;
}

}  // namespace detail

// One velocity-Verlet step for every world. The density is estimated once
// from the incoming positions; both half-kicks interpolate the same
// acceleration field (at the pre- and post-drift positions respectively).
inline WorldEnsemble step_worlds(const WorldEnsemble& ens, const PotentialSpec& V,
                                 const DensityEstimatorSpec& est,
                                 const GridSpec& grid,
                                 const PhysicalParams& params, double dt) {
  if (!(dt > 0)) throw ConfigError("dt must be positive");
  ens.validate();
  params.validate_for_grid(grid);
  V.validate(grid);

  WorldEnsemble out = ens;
  if (out.count() < 100) out.note("continuum approximation unreliable");

  const ScalarField rho = estimate_density(ens, est, grid);
  const double support = detail::support_floor(est, grid, ens.pos);
  const VectorField acc = detail::accel_field(
      rho, V, params, support, detail::robust_spread(grid, ens.pos));
  const std::size_t dim = grid.dim();

  std::vector<std::uint64_t> events(out.count(), 0);
  detail::parallel_chunks(out.count(), [&](std::size_t b, std::size_t e) {
    for (std::size_t w = b; w < e; ++w) {
      auto& x = out.pos[w];
      auto& v = out.vel[w];
      for (std::size_t a = 0; a < dim; ++a)
        v[a] += 0.5 * dt * detail::interp_field(grid, acc.comp[a], x);
      for (std::size_t a = 0; a < dim; ++a) x[a] += dt * v[a];
      events[w] = detail::apply_boundary(grid, x, v);
      for (std::size_t a = 0; a < dim; ++a)
        v[a] += 0.5 * dt * detail::interp_field(grid, acc.comp[a], x);
    }
  });
  for (std::uint64_t e : events) out.boundary_events += e;
  out.time = ens.time + dt;
  return out;
}

// A trajectory following the local mean velocity through a stored history.
struct Pathline {
  std::vector<std::array<double, 3>> points;
  bool truncated = false;  // entered a masked node region
};

// Integrate dx/dt = v(x, t) through uniformly spaced wave snapshots with
// RK4 in time (velocity linearly interpolated between frames, multilinear
// in space).
inline std::vector<Pathline> bohmian_pathlines(
    const std::vector<WaveState>& history,
    const std::vector<std::array<double, 3>>& starts,
    const PhysicalParams& params) {
  if (history.size() < 2)
    throw ConfigError("pathlines need at least two stored states");
  const GridSpec& g = history.front().grid;
  params.validate_for_grid(g);
  const double dt = history[1].time - history[0].time;
  if (!(dt > 0)) throw ConfigError("history must advance in time");
  for (std::size_t i = 1; i < history.size(); ++i) {
    if (history[i].grid != g) throw ConfigError("history grids must match");
    const double step = history[i].time - history[i - 1].time;
    if (std::abs(step - dt) > 1e-9 * dt)
      throw ConfigError("history must be uniformly spaced in time");
  }

  std::vector<HydroState> fields;
  fields.reserve(history.size());
  for (const auto& w : history) fields.push_back(madelung_decompose(w, params));

  const std::size_t dim = g.dim();
  auto velocity_at = [&](const std::array<double, 3>& x, std::size_t frame,
                         double frac, std::size_t axis) {
    const auto& f0 = fields[frame].velocity;
    if (frac <= 0.0)
      return detail::interp_field_masked(g, f0.comp[axis], f0.defined, x);
    const auto& f1 = fields[frame + 1].velocity;
    const double v0 =
        detail::interp_field_masked(g, f0.comp[axis], f0.defined, x);
    const double v1 =
        detail::interp_field_masked(g, f1.comp[axis], f1.defined, x);
    return (1.0 - frac) * v0 + frac * v1;
  };

  std::vector<Pathline> out(starts.size());
  for (std::size_t s = 0; s < starts.size(); ++s) {
    Pathline& path = out[s];
    std::array<double, 3> x = starts[s];
    std::array<double, 3> dummy{};
    detail::apply_boundary(g, x, dummy);
    path.points.push_back(x);
    for (std::size_t fr = 0; fr + 1 < history.size(); ++fr) {
      if (!fields[fr].velocity.defined[detail::owning_cell(g, x)]) {
        path.truncated = true;
        break;
      }
      std::array<std::array<double, 3>, 4> k{};
      std::array<double, 3> xt{};
      for (std::size_t a = 0; a < dim; ++a) k[0][a] = velocity_at(x, fr, 0.0, a);
      for (std::size_t a = 0; a < dim; ++a) xt[a] = x[a] + 0.5 * dt * k[0][a];
      detail::apply_boundary(g, xt, dummy);
      for (std::size_t a = 0; a < dim; ++a) k[1][a] = velocity_at(xt, fr, 0.5, a);
      for (std::size_t a = 0; a < dim; ++a) xt[a] = x[a] + 0.5 * dt * k[1][a];
      detail::apply_boundary(g, xt, dummy);
      for (std::size_t a = 0; a < dim; ++a) k[2][a] = velocity_at(xt, fr, 0.5, a);
      for (std::size_t a = 0; a < dim; ++a) xt[a] = x[a] + dt * k[2][a];
      detail::apply_boundary(g, xt, dummy);
      for (std::size_t a = 0; a < dim; ++a) k[3][a] = velocity_at(xt, fr, 1.0, a);
      for (std::size_t a = 0; a < dim; ++a)
        x[a] += dt / 6.0 * (k[0][a] + 2.0 * k[1][a] + 2.0 * k[2][a] + k[3][a]);
      detail::apply_boundary(g, x, dummy);
      if (!fields[fr + 1].velocity.defined[detail::owning_cell(g, x)]) {
        path.truncated = true;
        break;
      }
      path.points.push_back(x);
    }
  }
  return out;
}

}  // namespace miw
