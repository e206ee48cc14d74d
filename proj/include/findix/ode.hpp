#ifndef FINDIX_ODE_HPP
#define FINDIX_ODE_HPP

#include <algorithm>
#include <cmath>

#include "findix/types.hpp"

namespace findix::ode {

struct Dp54Options {
  double abs_tol = 1e-10;
  double rel_tol = 1e-10;
  double h_max = 1e100;
  double h_min = 1e-13;
  double h_init = 0.0;  // 0: pick from h_max
};

enum class Status {
  ok,        // reached t_end
  boundary,  // RHS kept throwing DomainError at the minimum step: stopped early
};

// Dormand-Prince 5(4) with error-controlled step size.  f(t, y) -> dy/dt and
// may throw DomainError near the chart boundary, which is treated as a wall:
// the step shrinks and eventually the integration stops at the last good
// state.  post(t, y) runs after every accepted step and may adjust y in
// place (frame re-orthonormalization).
template <class F, class Post>
Status dp54_integrate(F&& f, double& t, StateVec& y, double t_end, const Dp54Options& opt, Post&& post) {
  if (t == t_end) return Status::ok;
  const double dir = t_end > t ? 1.0 : -1.0;
  double h = opt.h_init != 0.0 ? std::abs(opt.h_init) : std::min(opt.h_max, std::abs(t_end - t));

  StateVec k1, k2, k3, k4, k5, k6, k7, ynew, yerr;
  bool have_k1 = false;

  while (dir * (t_end - t) > 1e-14 * std::max(1.0, std::abs(t))) {
    h = std::min({h, opt.h_max, std::abs(t_end - t)});
    const double hs = dir * h;
    bool stage_failed = false;
    try {
      if (!have_k1) k1 = f(t, y);
      k2 = f(t + hs * (1.0 / 5), y + hs * (1.0 / 5) * k1);
      k3 = f(t + hs * (3.0 / 10), y + hs * ((3.0 / 40) * k1 + (9.0 / 40) * k2));
      k4 = f(t + hs * (4.0 / 5), y + hs * ((44.0 / 45) * k1 - (56.0 / 15) * k2 + (32.0 / 9) * k3));
      k5 = f(t + hs * (8.0 / 9),
             y + hs * ((19372.0 / 6561) * k1 - (25360.0 / 2187) * k2 + (64448.0 / 6561) * k3 -
                       (212.0 / 729) * k4));
      k6 = f(t + hs, y + hs * ((9017.0 / 3168) * k1 - (355.0 / 33) * k2 + (46732.0 / 5247) * k3 +
                               (49.0 / 176) * k4 - (5103.0 / 18656) * k5));
      ynew = y + hs * ((35.0 / 384) * k1 + (500.0 / 1113) * k3 + (125.0 / 192) * k4 -
                       (2187.0 / 6784) * k5 + (11.0 / 84) * k6);
      k7 = f(t + hs, ynew);
    } catch (const DomainError&) {
      stage_failed = true;
    }

    if (!stage_failed) {
      yerr = hs * ((71.0 / 57600) * k1 - (71.0 / 16695) * k3 + (71.0 / 1920) * k4 -
                   (17253.0 / 339200) * k5 + (22.0 / 525) * k6 - (1.0 / 40) * k7);
      double err = 0.0;
      for (int i = 0; i < y.size(); ++i) {
        const double sc = opt.abs_tol + opt.rel_tol * std::max(std::abs(y[i]), std::abs(ynew[i]));
        const double e = yerr[i] / sc;
        err += e * e;
      }
      err = std::sqrt(err / y.size());
      if (err <= 1.0 || !std::isfinite(err)) {
        if (!std::isfinite(err)) {
          stage_failed = true;  // NaN propagation counts as a failed step
        } else {
          t += hs;
          y = ynew;
          post(t, y);
          have_k1 = false;  // post may modify y, so no FSAL reuse
          const double grow = 0.9 * std::pow(std::max(err, 1e-10), -0.2);
          h *= std::clamp(grow, 1.0, 5.0);
          continue;
        }
      } else {
        h *= std::clamp(0.9 * std::pow(err, -0.2), 0.2, 0.9);
      }
    }
    if (stage_failed) {
      h *= 0.5;
      have_k1 = false;
    }
    if (h < opt.h_min) {
      if (stage_failed) return Status::boundary;
      throw SolverError("dp54: step size underflow at t=" + std::to_string(t));
    }
  }
  return Status::ok;
}

}  // namespace findix::ode

#endif  // FINDIX_ODE_HPP
