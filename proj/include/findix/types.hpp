#ifndef FINDIX_TYPES_HPP
#define FINDIX_TYPES_HPP

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>

namespace findix {

// Chart dimensions stay tiny (n <= 3 in the catalog), so cap the dynamic
// sizes and keep everything on the stack.
constexpr int kMaxDim = 8;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;

// ODE state vectors: geodesic+frame state needs n*(n+2) <= 40 doubles.
using StateVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 48, 1>;

inline Vec make_vec(std::initializer_list<double> xs) {
  Vec v(static_cast<int>(xs.size()));
  int i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

// Input outside a stated precondition (zero vectors, points off the chart,
// samples off the grid).
class DomainError : public std::runtime_error {
 public:
  explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

// The model itself misbehaves: non-PD fundamental tensor, singular metric,
// loss of convexity.
class ModelError : public std::runtime_error {
 public:
  explicit ModelError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad experiment configuration (grid too coarse, epsilon >= horizon, ...).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure inside the inverse solver (non-contraction, singular
// diagonal state, uncovered initialization interval).
class SolverError : public std::runtime_error {
 public:
  explicit SolverError(const std::string& msg) : std::runtime_error(msg) {}
};

// File parsing / writing problems, with row numbers where available.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct Box {
  Vec lo, hi;

  bool contains(const Vec& x) const {
    for (int i = 0; i < x.size(); ++i)
      if (x[i] < lo[i] || x[i] > hi[i]) return false;
    return true;
  }

  static Box cube(int dim, double half_width) {
    Box b;
    b.lo = Vec::Constant(dim, -half_width);
    b.hi = Vec::Constant(dim, half_width);
    return b;
  }
};

// Uniform sample grid: nodes start + i*h for i in [0, count).
struct GridSpec {
  double start = 0.0;
  double h = 0.0;
  int count = 0;

  double at(int i) const { return start + h * i; }
  double back() const { return at(count - 1); }

  // Node index of a coordinate that is expected to sit on the grid.
  int index_of(double x, double tol_factor = 1e-6) const {
    const double u = (x - start) / h;
    const int i = static_cast<int>(std::lround(u));
    if (i < 0 || i >= count || std::abs(u - i) > tol_factor)
      throw DomainError("coordinate " + std::to_string(x) + " is not a grid node");
    return i;
  }

  bool covers(double x) const { return x >= start - 1e-12 && x <= back() + 1e-12; }
};

inline double sup_norm(const Mat& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace findix

#endif  // FINDIX_TYPES_HPP
