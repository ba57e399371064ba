#pragma once

#include <functional>

#include "mocap/frames.hpp"

namespace mocap::nn {

// Value at x; writes the gradient into `grad`.
using Objective = std::function<double(const VecX& x, VecX& grad)>;

struct LbfgsOptions {
  int iterations = 1;
  int history = 10;
  double c1 = 1e-4;           // sufficient-decrease constant
  double backtrack = 0.5;
  int max_line_search = 40;
  double gradient_tolerance = 1e-12;
};

struct LbfgsResult {
  VecX x;
  double value = 0.0;
  double initial_value = 0.0;
  int iterations = 0;
  bool converged = false;            // gradient below tolerance
  bool line_search_failed = false;   // x is the last accepted point
};

// Two-loop recursion with Armijo backtracking. The objective never
// increases; a failed line search stops early and keeps the last point.
// Throws NonFiniteLoss if the objective is not finite at x0.
LbfgsResult lbfgs_minimize(const Objective& f, const VecX& x0, const LbfgsOptions& options = {});

}  // namespace mocap::nn
