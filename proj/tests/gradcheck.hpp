#pragma once

// Central-difference gradient oracle.

#include <algorithm>
#include <functional>

#include "mocap/frames.hpp"

namespace mocap::testing {

inline VecX central_differences(const std::function<double(const VecX&)>& f, const VecX& x, double h = 1e-4) {
  VecX g(x.size());
  VecX p = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    p(i) = x(i) + h;
    const double up = f(p);
    p(i) = x(i) - h;
    const double down = f(p);
    p(i) = x(i);
    g(i) = (up - down) / (2.0 * h);
  }
  return g;
}

inline double relative_error(const VecX& a, const VecX& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / scale;
}

}  // namespace mocap::testing
