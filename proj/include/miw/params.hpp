#pragma once

#include <cstddef>
#include <vector>

#include "common.hpp"
#include "grid.hpp"

namespace miw {

// Physical configuration: N particles, each moving in pdim spatial
// dimensions. Configuration-space axes are particle-major: axis k*pdim + a
// is direction a of particle k.
struct PhysicalParams {
  double hbar = 1.0;
  std::size_t particles = 1;
  std::size_t pdim = 1;
  std::vector<double> masses = {1.0};

  void validate() const {
    if (!(hbar > 0)) throw ConfigError("hbar must be positive");
    if (particles < 1) throw ConfigError("need at least one particle");
    if (pdim < 1 || pdim > 3)
      throw ConfigError("per-particle spatial dimension must be 1, 2 or 3");
    if (masses.size() != particles)
      throw ConfigError("need exactly one mass per particle");
    for (double m : masses)
      if (!(m > 0)) throw ConfigError("masses must be positive");
  }

  std::size_t config_dim() const { return particles * pdim; }
  std::size_t particle_for_axis(std::size_t axis) const { return axis / pdim; }
  double mass_for_axis(std::size_t axis) const {
    return masses[particle_for_axis(axis)];
  }

  // Grid-based representations only support up to 3 configuration axes.
  void validate_for_grid(const GridSpec& g) const {
    validate();
    g.validate();
    if (config_dim() > 3)
      throw ConfigError("grid-based modes require particles * pdim <= 3");
    if (g.dim() != config_dim())
      throw ConfigError("grid dimension must equal particles * pdim");
  }
};

}  // namespace miw
