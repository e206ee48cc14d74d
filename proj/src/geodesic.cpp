#include "findix/geodesic.hpp"

#include <cmath>
#include <ostream>

#include "findix/gridmath.hpp"
#include "findix/ode.hpp"

namespace findix {

namespace {

struct Packing {
  int n;
  int size() const { return n * (n + 1); }  // x, v, f_1..f_{n-1}

  StateVec pack(const Vec& x, const Vec& v, const Mat& f) const {
    StateVec y(size());
    y.segment(0, n) = x;
    y.segment(n, n) = v;
    for (int k = 0; k < n - 1; ++k) y.segment(2 * n + k * n, n) = f.col(k);
    return y;
  }
  Vec x_of(const StateVec& y) const { return y.segment(0, n); }
  Vec v_of(const StateVec& y) const { return y.segment(n, n); }
  Mat f_of(const StateVec& y) const {
    Mat f(n, n - 1);
    for (int k = 0; k < n - 1; ++k) f.col(k) = y.segment(2 * n + k * n, n);
    return f;
  }
};

// Gram-Schmidt of the normal frame against g, keeping the unit velocity as
// the last column.  Returns the full n x n frame.
Mat orthonormal_frame(const Mat& g, const Vec& v, const Mat& normals) {
  const int n = static_cast<int>(v.size());
  Mat f(n, n);
  Vec un = v / std::sqrt(v.dot(g * v));
  f.col(n - 1) = un;
  int filled = 0;
  for (int c = 0; c < normals.cols() && filled < n - 1; ++c) {
    Vec w = normals.col(c);
    w -= un * (un.dot(g * w));
    for (int m = 0; m < filled; ++m) w -= f.col(m) * (f.col(m).dot(g * w));
    const double nw = std::sqrt(std::abs(w.dot(g * w)));
    if (nw < 1e-8) continue;
    f.col(filled++) = w / nw;
  }
  if (filled != n - 1) throw ModelError("could not complete an orthonormal frame");
  return f;
}

Mat initial_frame(const ManifoldChart& chart, const Vec& x0, const Vec& v0) {
  const Mat g = chart.fundamental_tensor(x0, v0);
  Mat candidates = Mat::Identity(static_cast<int>(x0.size()), static_cast<int>(x0.size()));
  return orthonormal_frame(g, v0, candidates);
}

}  // namespace

Vec GeodesicFrame::normal_components(int i, const Vec& w) const {
  const auto ui = static_cast<size_t>(i);
  Vec c(dim - 1);
  for (int k = 0; k < dim - 1; ++k) c[k] = frame[ui].col(k).dot(gv[ui] * w);
  return c;
}

Vec GeodesicFrame::from_normal_components(int i, const Vec& c) const {
  const auto ui = static_cast<size_t>(i);
  Vec w = Vec::Zero(dim);
  for (int k = 0; k < dim - 1; ++k) w += c[k] * frame[ui].col(k);
  return w;
}

GeodesicFrame integrate_geodesic(const ManifoldChart& chart, const Vec& x0, const Vec& v0_in,
                                 double t_lo, double t_hi, double dt,
                                 const IntegratorOptions& opts) {
  if (!(t_lo <= 0.0 && t_hi >= 0.0)) throw DomainError("integration span must contain t = 0");
  if (dt <= 0.0) throw DomainError("sample step must be positive");
  const double ratio = -t_lo / dt;
  if (std::abs(ratio - std::lround(ratio)) > 1e-9)
    throw DomainError("t = 0 must land on a sample node");

  const int n = chart.dim();
  const Vec v0 = chart.unit_vector(x0, v0_in);

  GeodesicFrame out;
  out.chart_id = chart.id();
  out.dim = n;
  out.grid.start = t_lo;
  out.grid.h = dt;
  out.grid.count = static_cast<int>(std::lround((t_hi - t_lo) / dt)) + 1;
  const int i0 = static_cast<int>(std::lround(ratio));
  out.x.resize(out.grid.count);
  out.v.resize(out.grid.count);
  out.frame.resize(out.grid.count);
  out.gv.resize(out.grid.count);
  out.lo_index = i0;
  out.hi_index = i0;

  const Packing pk{n};
  const Mat f0 = initial_frame(chart, x0, v0);

  auto rhs = [&](double, const StateVec& y) {
    const Vec x = pk.x_of(y), v = pk.v_of(y);
    const SprayOutput sp = chart.geodesic_spray(x, v);
    StateVec dy(pk.size());
    dy.segment(0, n) = v;
    dy.segment(n, n) = -2.0 * sp.G;
    const Mat f = pk.f_of(y);
    for (int k = 0; k < n - 1; ++k) dy.segment(2 * n + k * n, n) = -(sp.N * f.col(k)).eval();
    return dy;
  };

  auto reorth = [&](double, StateVec& y) {
    if (!opts.reorthonormalize) return;
    const Vec x = pk.x_of(y), v = pk.v_of(y);
    const Mat g = chart.fundamental_tensor(x, v);
    const Mat f = orthonormal_frame(g, v, pk.f_of(y));
    for (int k = 0; k < n - 1; ++k) y.segment(2 * n + k * n, n) = f.col(k);
  };

  auto store = [&](int i, const StateVec& y) {
    const auto ui = static_cast<size_t>(i);
    out.x[ui] = pk.x_of(y);
    out.v[ui] = pk.v_of(y);
    out.gv[ui] = chart.fundamental_tensor(out.x[ui], out.v[ui]);
    Mat f(n, n);
    const Mat fn = pk.f_of(y);
    f.block(0, 0, n, n - 1) = fn;
    f.col(n - 1) = out.v[ui] / std::sqrt(out.v[ui].dot(out.gv[ui] * out.v[ui]));
    out.frame[ui] = f;
  };

  ode::Dp54Options oopt;
  oopt.abs_tol = opts.abs_tol;
  oopt.rel_tol = opts.rel_tol;
  oopt.h_max = dt;

  const StateVec y0 = pk.pack(x0, v0, f0.block(0, 0, n, n - 1));
  store(i0, y0);

  // forward from 0, then backward from 0 with negative steps (reversed
  // curves of non-reversible metrics are not geodesics).
  for (int dir : {+1, -1}) {
    StateVec y = y0;
    double t = 0.0;
    int i = i0;
    while ((dir > 0 && i < out.grid.count - 1) || (dir < 0 && i > 0)) {
      const int inext = i + dir;
      const auto status = ode::dp54_integrate(rhs, t, y, out.grid.at(inext), oopt, reorth);
      if (status != ode::Status::ok) {
        (dir > 0 ? out.truncated_hi : out.truncated_lo) = true;
        break;
      }
      i = inext;
      store(i, y);
      (dir > 0 ? out.hi_index : out.lo_index) = i;
    }
  }
  return out;
}

FrameField covariant_derivative(const GeodesicFrame& frame, const FrameField& field) {
  const int count = frame.hi_index - frame.lo_index + 1;
  if (static_cast<int>(field.values.size()) != count)
    throw DomainError("frame field must be sampled on the frame grid");
  if (count < 5) throw DomainError("covariant derivative needs at least 5 samples");
  FrameField out;
  out.values = gridmath::deriv_on_grid(field.values, frame.grid.h, 1);
  return out;
}

Mat CurvatureCurve::at(double t) const {
  const double lo = grid.at(lo_index), hi = grid.at(hi_index);
  if (t < lo - 1e-9 || t > hi + 1e-9)
    throw DomainError("curvature curve queried outside its span");
  // interpolate within the valid window
  std::vector<Mat> window(rmat.begin() + lo_index, rmat.begin() + hi_index + 1);
  return gridmath::interp_cubic(window, lo, grid.h, std::clamp(t, lo, hi));
}

CurvatureCurve curvature_along(const GeodesicFrame& frame, const ManifoldChart& chart) {
  CurvatureCurve out;
  out.grid = frame.grid;
  out.lo_index = frame.lo_index;
  out.hi_index = frame.hi_index;
  out.rmat.resize(frame.grid.count);
  const int m = frame.dim - 1;
  for (int i = frame.lo_index; i <= frame.hi_index; ++i) {
    const auto ui = static_cast<size_t>(i);
    const CurvatureOutput co = chart.curvature_operator(frame.x[ui], frame.v[ui]);
    out.any_warning = out.any_warning || co.accuracy_warning;
    Mat r(m, m);
    const Mat gR = frame.gv[ui] * co.R_full;
    for (int j = 0; j < m; ++j)
      for (int k = 0; k < m; ++k) r(j, k) = frame.frame[ui].col(j).dot(gR * frame.frame[ui].col(k));
    out.rmat[ui] = r;
  }
  return out;
}

void write_frame_csv(const GeodesicFrame& frame, std::ostream& out) {
  out << "t";
  for (int i = 0; i < frame.dim; ++i) out << ",x" << i + 1;
  for (int i = 0; i < frame.dim; ++i) out << ",v" << i + 1;
  for (int r = 0; r < frame.dim; ++r)
    for (int c = 0; c < frame.dim; ++c) out << ",f" << r + 1 << c + 1;
  out << "\n";
  out.precision(17);
  for (int i = frame.lo_index; i <= frame.hi_index; ++i) {
    const auto ui = static_cast<size_t>(i);
    out << frame.grid.at(i);
    for (int k = 0; k < frame.dim; ++k) out << ',' << frame.x[ui][k];
    for (int k = 0; k < frame.dim; ++k) out << ',' << frame.v[ui][k];
    for (int r = 0; r < frame.dim; ++r)
      for (int c = 0; c < frame.dim; ++c) out << ',' << frame.frame[ui](r, c);
    out << "\n";
  }
}

}  // namespace findix
