#ifndef FINDIX_GRIDMATH_HPP
#define FINDIX_GRIDMATH_HPP

#include <algorithm>
#include <span>
#include <vector>

#include "findix/types.hpp"

namespace findix::gridmath {

// Fornberg weights: c(i, k) is the weight of the sample at x[i] in the
// approximation of the k-th derivative at z, for k = 0..m.  Exact for
// polynomials of degree x.size()-1, so k = 0 doubles as interpolation.
inline Eigen::MatrixXd fd_weights(double z, std::span<const double> x, int m) {
  const int n = static_cast<int>(x.size()) - 1;
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(n + 1, m + 1);
  double c1 = 1.0, c4 = x[0] - z;
  c(0, 0) = 1.0;
  for (int i = 1; i <= n; ++i) {
    const int mn = std::min(i, m);
    double c2 = 1.0, c5 = c4;
    c4 = x[i] - z;
    for (int j = 0; j < i; ++j) {
      const double c3 = x[i] - x[j];
      c2 *= c3;
      if (j == i - 1) {
        for (int k = mn; k >= 1; --k)
          c(i, k) = c1 * (k * c(i - 1, k - 1) - c5 * c(i - 1, k)) / c2;
        c(i, 0) = -c1 * c5 * c(i - 1, 0) / c2;
      }
      for (int k = mn; k >= 1; --k) c(j, k) = (c4 * c(j, k) - k * c(j, k - 1)) / c3;
      c(j, 0) = c4 * c(j, 0) / c3;
    }
    c1 = c2;
  }
  return c;
}

// Weights for the k-th derivative at node `at` of a uniform grid with
// `npts` nodes at offsets 0..npts-1 (unit spacing); divide by h^k outside.
inline Eigen::VectorXd uniform_deriv_weights(int npts, int at, int k) {
  std::vector<double> x(npts);
  for (int i = 0; i < npts; ++i) x[i] = static_cast<double>(i);
  return fd_weights(static_cast<double>(at), x, k).col(k);
}

// Apply stencil weights to a window of samples.
template <class T>
T apply_weights(const Eigen::VectorXd& w, std::span<const T> window) {
  T acc = window[0] * w[0];
  for (int i = 1; i < w.size(); ++i) acc += window[i] * w[i];
  return acc;
}

// k-th derivative of uniformly sampled values at every node, 5-point
// stencils (central in the interior, one-sided at the ends).
template <class T>
std::vector<T> deriv_on_grid(const std::vector<T>& f, double h, int k, int npts = 5) {
  const int n = static_cast<int>(f.size());
  if (n < npts) throw DomainError("deriv_on_grid: need at least " + std::to_string(npts) + " samples");
  std::vector<T> out(n);
  const double hk = std::pow(h, k);
  for (int i = 0; i < n; ++i) {
    const int lo = std::clamp(i - npts / 2, 0, n - npts);
    const Eigen::VectorXd w = uniform_deriv_weights(npts, i - lo, k);
    T acc = f[lo] * w[0];
    for (int j = 1; j < npts; ++j) acc += f[lo + j] * w[j];
    out[i] = acc / hk;
  }
  return out;
}

// Cumulative integral on uniform nodes with signed step h: out[i] is the
// integral of the sampled function from node 0 to node i.  Fourth order for
// >= 4 nodes; degrades gracefully for shorter windows.
template <class T>
std::vector<T> cumulative_integral(std::span<const T> f, double h) {
  const int m = static_cast<int>(f.size()) - 1;  // number of intervals
  std::vector<T> out(m + 1);
  out[0] = f[0] * 0.0;
  if (m <= 0) return out;
  if (m == 1) {
    out[1] = (f[0] + f[1]) * (h / 2.0);
    return out;
  }
  if (m == 2) {
    out[1] = (f[0] * 5.0 + f[1] * 8.0 - f[2]) * (h / 12.0);
    out[2] = (f[0] + f[1] * 4.0 + f[2]) * (h / 3.0);
    return out;
  }
  // Cubic (Adams-Moulton style) per-interval rules.
  out[1] = out[0] + (f[0] * 9.0 + f[1] * 19.0 - f[2] * 5.0 + f[3]) * (h / 24.0);
  for (int i = 1; i <= m - 2; ++i)
    out[i + 1] = out[i] + (f[i - 1] * -1.0 + f[i] * 13.0 + f[i + 1] * 13.0 - f[i + 2]) * (h / 24.0);
  out[m] = out[m - 1] + (f[m - 3] - f[m - 2] * 5.0 + f[m - 1] * 19.0 + f[m] * 9.0) * (h / 24.0);
  return out;
}

// Cubic interpolation of uniformly sampled values at an arbitrary point.
template <class T>
T interp_cubic(const std::vector<T>& f, double start, double h, double x) {
  const int n = static_cast<int>(f.size());
  if (n == 1) return f[0];
  const double u = (x - start) / h;
  if (n < 4) {
    const int i = std::clamp(static_cast<int>(std::floor(u)), 0, n - 2);
    const double s = u - i;
    return f[i] * (1.0 - s) + f[i + 1] * s;
  }
  int lo = std::clamp(static_cast<int>(std::floor(u)) - 1, 0, n - 4);
  std::vector<double> nodes = {0, 1, 2, 3};
  const Eigen::VectorXd w = fd_weights(u - lo, nodes, 0).col(0);
  T acc = f[lo] * w[0];
  for (int j = 1; j < 4; ++j) acc += f[lo + j] * w[j];
  return acc;
}

}  // namespace findix::gridmath

#endif  // FINDIX_GRIDMATH_HPP
