#pragma once

#include <functional>
#include <span>
#include <utility>

namespace miw {

// A region of configuration space, usable both for grid nodes and for
// continuous world positions.
struct Region {
  std::function<bool(std::span<const double>)> contains;
};

inline Region whole_space() {
  return Region{[](std::span<const double>) { return true; }};
}

inline Region axis_interval(std::size_t axis, double a, double b) {
  return Region{[axis, a, b](std::span<const double> x) {
    return x[axis] >= a && x[axis] < b;
  }};
}

inline Region axis_halfspace(std::size_t axis, double threshold,
                             bool above = true) {
  return Region{[axis, threshold, above](std::span<const double> x) {
    return above ? x[axis] >= threshold : x[axis] < threshold;
  }};
}

inline Region region_and(Region p, Region q) {
  return Region{[p = std::move(p.contains), q = std::move(q.contains)](
                    std::span<const double> x) { return p(x) && q(x); }};
}

inline Region region_or(Region p, Region q) {
  return Region{[p = std::move(p.contains), q = std::move(q.contains)](
                    std::span<const double> x) { return p(x) || q(x); }};
}

inline Region region_not(Region p) {
  return Region{[p = std::move(p.contains)](std::span<const double> x) {
    return !p(x);
  }};
}

}  // namespace miw
