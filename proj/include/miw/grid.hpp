#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "common.hpp"

namespace miw {

enum class Boundary { periodic, box };

struct AxisSpec {
  double lo = 0.0;
  double hi = 1.0;
  std::size_t points = 8;
};

// Uniform rectilinear grid over configuration space. Storage is row-major
// with the last axis contiguous.
//
// Node placement: periodic grids sample lo + i*h (the upper edge wraps back
// to lo); box grids are cell-centered, lo + (i + 1/2)*h, so the walls sit
// half a cell outside the outermost nodes and plain Riemann sums cover the
// domain exactly.
struct GridSpec {
  std::vector<AxisSpec> axes;
  Boundary boundary = Boundary::periodic;

  void validate() const {
    if (axes.empty() || axes.size() > 3)
      throw ConfigError("grid must have between 1 and 3 axes");
    for (const auto& a : axes) {
      if (!(a.hi > a.lo))
        throw ConfigError("grid axis upper bound must exceed lower bound");
      if (a.points < 8) throw ConfigError("grid axis needs at least 8 points");
    }
  }

  std::size_t dim() const { return axes.size(); }

  std::size_t size() const {
    std::size_t n = 1;
    for (const auto& a : axes) n *= a.points;
    return n;
  }

  double length(std::size_t ax) const { return axes[ax].hi - axes[ax].lo; }
  double spacing(std::size_t ax) const {
    return length(ax) / static_cast<double>(axes[ax].points);
  }

  double coord(std::size_t ax, std::size_t i) const {
    double off = boundary == Boundary::box ? 0.5 : 0.0;
    return axes[ax].lo + (static_cast<double>(i) + off) * spacing(ax);
  }

  double cell_volume() const {
    double v = 1.0;
    for (std::size_t a = 0; a < dim(); ++a) v *= spacing(a);
    return v;
  }

  std::array<std::size_t, 3> unravel(std::size_t idx) const {
    std::array<std::size_t, 3> mi{0, 0, 0};
    for (std::size_t a = dim(); a-- > 0;) {
      mi[a] = idx % axes[a].points;
      idx /= axes[a].points;
    }
    return mi;
  }

  std::size_t ravel(const std::array<std::size_t, 3>& mi) const {
    std::size_t idx = 0;
    for (std::size_t a = 0; a < dim(); ++a) idx = idx * axes[a].points + mi[a];
    return idx;
  }

  // Distance in flat index space between neighbors along an axis.
  std::size_t stride(std::size_t ax) const {
    std::size_t s = 1;
    for (std::size_t a = dim(); a-- > ax + 1;) s *= axes[a].points;
    return s;
  }

  void point(std::size_t idx, std::array<double, 3>& x) const {
    auto mi = unravel(idx);
    for (std::size_t a = 0; a < dim(); ++a) x[a] = coord(a, mi[a]);
  }

  bool operator==(const GridSpec& o) const {
    if (boundary != o.boundary || axes.size() != o.axes.size()) return false;
    for (std::size_t a = 0; a < axes.size(); ++a)
      if (axes[a].lo != o.axes[a].lo || axes[a].hi != o.axes[a].hi ||
          axes[a].points != o.axes[a].points)
        return false;
    return true;
  }
  bool operator!=(const GridSpec& o) const { return !(*this == o); }
};

namespace detail {

// Visits every 1D line of the grid along `axis`; fn(base, stride, count)
// describes the line's nodes as base + j*stride, j in [0, count).
template <class F>
inline void for_each_line(const GridSpec& g, std::size_t axis, F&& fn) {
  const std::size_t n = g.axes[axis].points;
  const std::size_t s = g.stride(axis);
  const std::size_t total = g.size();
  const std::size_t block = n * s;
  for (std::size_t big = 0; big < total; big += block)
    for (std::size_t small = 0; small < s; ++small) fn(big + small, s, n);
}

}  // namespace detail
}  // namespace miw
