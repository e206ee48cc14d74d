#ifndef FINDIX_HYPERDUAL_HPP
#define FINDIX_HYPERDUAL_HPP

#include <array>
#include <cmath>

namespace findix::hd {

// Hyper-dual number a + a1*e1 + a2*e2 + a12*e1*e2 with e1^2 = e2^2 = 0.
// Evaluating a function with seeded e1/e2 directions yields exact first and
// mixed second directional derivatives, with no step-size cancellation.
struct HD {
  double f = 0.0, d1 = 0.0, d2 = 0.0, d12 = 0.0;

  HD() = default;
  HD(double c) : f(c) {}  // NOLINT: implicit by design
  HD(double f_, double d1_, double d2_, double d12_) : f(f_), d1(d1_), d2(d2_), d12(d12_) {}
};

inline HD operator+(const HD& a, const HD& b) { return {a.f + b.f, a.d1 + b.d1, a.d2 + b.d2, a.d12 + b.d12}; }
inline HD operator-(const HD& a, const HD& b) { return {a.f - b.f, a.d1 - b.d1, a.d2 - b.d2, a.d12 - b.d12}; }
inline HD operator-(const HD& a) { return {-a.f, -a.d1, -a.d2, -a.d12}; }

inline HD operator*(const HD& a, const HD& b) {
  return {a.f * b.f,
          a.f * b.d1 + a.d1 * b.f,
          a.f * b.d2 + a.d2 * b.f,
          a.f * b.d12 + a.d1 * b.d2 + a.d2 * b.d1 + a.d12 * b.f};
}

inline HD inverse(const HD& b) {
  const double i0 = 1.0 / b.f;
  const double i02 = i0 * i0;
  return {i0, -b.d1 * i02, -b.d2 * i02, -b.d12 * i02 + 2.0 * b.d1 * b.d2 * i02 * i0};
}

inline HD operator/(const HD& a, const HD& b) { return a * inverse(b); }

inline HD sqrt(const HD& a) {
  const double s0 = std::sqrt(a.f);
  const double s1 = a.d1 / (2.0 * s0);
  const double s2 = a.d2 / (2.0 * s0);
  return {s0, s1, s2, (a.d12 - 2.0 * s1 * s2) / (2.0 * s0)};
}

inline HD exp(const HD& a) {
  const double e = std::exp(a.f);
  return {e, e * a.d1, e * a.d2, e * (a.d12 + a.d1 * a.d2)};
}

inline HD sin(const HD& a) {
  const double s = std::sin(a.f), c = std::cos(a.f);
  return {s, c * a.d1, c * a.d2, c * a.d12 - s * a.d1 * a.d2};
}

inline HD cos(const HD& a) {
  const double s = std::sin(a.f), c = std::cos(a.f);
  return {c, -s * a.d1, -s * a.d2, -s * a.d12 - c * a.d1 * a.d2};
}

// Minimal fixed-capacity vector of hyper-duals; enough for chart kernels.
struct HDVec {
  int n = 0;
  std::array<HD, 8> a{};

  HDVec() = default;
  explicit HDVec(int n_) : n(n_) {}
  HD& operator[](int i) { return a[static_cast<size_t>(i)]; }
  const HD& operator[](int i) const { return a[static_cast<size_t>(i)]; }
  int size() const { return n; }
};

}  // namespace findix::hd

#endif  // FINDIX_HYPERDUAL_HPP
