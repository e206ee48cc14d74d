#ifndef FINDIX_NUMDIFF_HPP
#define FINDIX_NUMDIFF_HPP

#include <algorithm>
#include <cmath>
#include <type_traits>
#include <utility>

#include "findix/types.hpp"

namespace findix::numdiff {

// Richardson-extrapolated central differences.  Each stencil is evaluated at
// steps h and h/2 and combined to cancel the leading O(h^2) term.  The probe
// f takes the step offset and may return a scalar, Vec, or Mat.

template <class F>
auto deriv1(F&& f, double h) {
  using T = std::decay_t<decltype(f(0.0))>;
  auto d = [&](double s) -> T { return (f(s) - f(-s)) / (2.0 * s); };
  T a = d(h), b = d(h / 2);
  return T((4.0 * b - a) / 3.0);
}

template <class F>
auto deriv2(F&& f, double h) {
  using T = std::decay_t<decltype(f(0.0))>;
  T f0 = f(0.0);
  auto d = [&](double s) -> T { return (f(s) - 2.0 * f0 + f(-s)) / (s * s); };
  T a = d(h), b = d(h / 2);
  return T((4.0 * b - a) / 3.0);
}

// Mixed second derivative d^2 f / da db for a two-parameter probe f(a, b).
template <class F>
auto deriv11(F&& f, double ha, double hb) {
  using T = std::decay_t<decltype(f(0.0, 0.0))>;
  auto d = [&](double sa, double sb) -> T {
    return (f(sa, sb) - f(sa, -sb) - f(-sa, sb) + f(-sa, -sb)) / (4.0 * sa * sb);
  };
  T a = d(ha, hb), b = d(ha / 2, hb / 2);
  return T((4.0 * b - a) / 3.0);
}

// Step size policy for chart-level differentiation.
inline double base_step(const Vec& x, const Vec& v) {
  return 1e-3 * std::max({1.0, x.norm(), v.norm()});
}

}  // namespace findix::numdiff

#endif  // FINDIX_NUMDIFF_HPP
