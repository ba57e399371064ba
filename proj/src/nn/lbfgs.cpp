#include "mocap/nn/lbfgs.hpp"

#include <cmath>
#include <deque>

#include "mocap/errors.hpp"

namespace mocap::nn {

LbfgsResult lbfgs_minimize(const Objective& f, const VecX& x0, const LbfgsOptions& options) {
  LbfgsResult res;
  res.x = x0;
  VecX g(x0.size());
  double fx = f(res.x, g);
  if (!std::isfinite(fx) || !g.allFinite()) throw NonFiniteLoss("lbfgs_minimize: objective not finite at start");
  res.initial_value = res.value = fx;

  std::deque<VecX> s_hist, y_hist;
  std::deque<double> rho_hist;
  VecX g_new(x0.size());

  for (int it = 0; it < options.iterations; ++it) {
    if (g.lpNorm<Eigen::Infinity>() <= options.gradient_tolerance) {
      res.converged = true;
      break;
    }
    // two-loop recursion
    VecX q = g;
    std::vector<double> alpha(s_hist.size());
    for (std::size_t i = s_hist.size(); i-- > 0;) {
      alpha[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    double gamma = 1.0;
    if (!s_hist.empty()) gamma = s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    VecX dir = gamma * q;
    for (std::size_t i = 0; i < s_hist.size(); ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(dir);
      dir += s_hist[i] * (alpha[i] - beta);
    }
    dir = -dir;
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {  // not a descent direction: restart from steepest descent
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      dir = -g;
      slope = -g.squaredNorm();
    }

    double step = s_hist.empty() ? std::min(1.0, 1.0 / g.norm()) : 1.0;
    bool accepted = false;
    VecX x_new;
    double f_new = fx;
    for (int ls = 0; ls < options.max_line_search; ++ls) {
      x_new = res.x + step * dir;
      f_new = f(x_new, g_new);
      if (std::isfinite(f_new) && g_new.allFinite() && f_new <= fx + options.c1 * step * slope) {
        accepted = true;
        break;
      }
      step *= options.backtrack;
    }
    if (!accepted) {
      res.line_search_failed = true;
      break;
    }

    VecX s = x_new - res.x;
    VecX y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > options.history) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    res.x = std::move(x_new);
    fx = f_new;
    g = g_new;
    res.value = fx;
    ++res.iterations;
  }
  if (!res.converged && g.lpNorm<Eigen::Infinity>() <= options.gradient_tolerance) res.converged = true;
  return res;
}

}  // namespace mocap::nn
