#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "field.hpp"
#include "params.hpp"

namespace miw {

enum class PotentialKind { free_space, harmonic, double_slit, infinite_well, custom_grid };

inline const char* to_string(PotentialKind k) {
  switch (k) {
    case PotentialKind::free_space: return "free";
    case PotentialKind::harmonic: return "harmonic";
    case PotentialKind::double_slit: return "double_slit";
    case PotentialKind::infinite_well: return "infinite_well";
    case PotentialKind::custom_grid: return "custom_grid";
  }
  return "?";
}

// Static external potential. The double_slit kind carries the slit
// geometry used to prepare the post-screen initial state; the potential
// itself is zero there (the screen is modeled as state preparation, not
// as a barrier the solver must resolve).
struct PotentialSpec {
  PotentialKind kind = PotentialKind::free_space;
  std::vector<double> omega;   // harmonic, per configuration axis
  std::vector<double> center;  // harmonic center, per axis
  double slit_separation = 6.0;
  double slit_width = 1.0;
  double well_length = 1.0;
  double barrier_height = 1e6;  // infinite_well on periodic grids
  ScalarField custom;

  static PotentialSpec make_free() { return {}; }

  static PotentialSpec make_harmonic(std::vector<double> w,
                                     std::vector<double> c = {}) {
    PotentialSpec p;
    p.kind = PotentialKind::harmonic;
    p.omega = std::move(w);
    p.center = std::move(c);
    return p;
  }

  static PotentialSpec make_double_slit(double separation, double width) {
    PotentialSpec p;
    p.kind = PotentialKind::double_slit;
    p.slit_separation = separation;
    p.slit_width = width;
    return p;
  }

  static PotentialSpec make_infinite_well(double length) {
    PotentialSpec p;
    p.kind = PotentialKind::infinite_well;
    p.well_length = length;
    return p;
  }

  static PotentialSpec make_custom(ScalarField f) {
    PotentialSpec p;
    p.kind = PotentialKind::custom_grid;
    p.custom = std::move(f);
    return p;
  }

  bool translation_invariant() const {
    return kind == PotentialKind::free_space;
  }

  void validate(const GridSpec& g) const {
    switch (kind) {
      case PotentialKind::free_space:
      case PotentialKind::double_slit:
        break;
      case PotentialKind::harmonic:
        if (omega.size() != g.dim())
          throw ConfigError("harmonic potential needs one omega per axis");
        for (double w : omega)
          if (!(w > 0)) throw ConfigError("harmonic omega must be positive");
        if (!center.empty() && center.size() != g.dim())
          throw ConfigError("harmonic center dimension mismatch");
        break;
      case PotentialKind::infinite_well:
        if (!(well_length > 0)) throw ConfigError("well length must be positive");
        break;
      case PotentialKind::custom_grid:
        if (custom.grid != g) throw ConfigError("custom potential grid mismatch");
        break;
    }
  }

  ScalarField evaluate(const GridSpec& g, const PhysicalParams& params) const {
    validate(g);
    ScalarField out = make_scalar_field(g);
    const std::size_t dim = g.dim();
    std::array<double, 3> x{};
    switch (kind) {
      case PotentialKind::free_space:
      case PotentialKind::double_slit:
        break;
      case PotentialKind::harmonic:
        for (std::size_t i = 0; i < out.values.size(); ++i) {
          g.point(i, x);
          double v = 0.0;
          for (std::size_t a = 0; a < dim; ++a) {
            const double c = center.empty() ? 0.0 : center[a];
            const double d = x[a] - c;
            v += 0.5 * params.mass_for_axis(a) * omega[a] * omega[a] * d * d;
          }
          out.values[i] = v;
        }
        break;
      case PotentialKind::infinite_well:
        // On a box grid the domain boundary is the wall. On a periodic
        // grid the wall is a smooth tall barrier at the wrap seam.
        if (g.boundary == Boundary::periodic) {
          const double lo = g.axes[0].lo;
          const double L = g.length(0);
          const double w = 4.0 * g.spacing(0);
          for (std::size_t i = 0; i < out.values.size(); ++i) {
            g.point(i, x);
            const double s = (x[0] - lo) / L;  // 0..1 across the cell
            const double d = std::min(s, 1.0 - s) * L;
            out.values[i] = barrier_height * std::exp(-(d * d) / (2.0 * w * w));
          }
        }
        break;
      case PotentialKind::custom_grid:
        out = custom;
        break;
    }
    return out;
  }
};

}  // namespace miw
