#include "findix/forward.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "findix/gridmath.hpp"

namespace findix {

namespace {

// One RK4 step of (j, y)' = (y, -R j); curvature supplied at the endpoints
// and midpoint.
void rk4_step(Mat& j, Mat& y, const Mat& R0, const Mat& Rm, const Mat& R1, double dr) {
  const Mat k1j = y;
  const Mat k1y = -R0 * j;
  const Mat k2j = y + (dr / 2) * k1y;
  const Mat k2y = -Rm * (j + (dr / 2) * k1j);
  const Mat k3j = y + (dr / 2) * k2y;
  const Mat k3y = -Rm * (j + (dr / 2) * k2j);
  const Mat k4j = y + dr * k3y;
  const Mat k4y = -R1 * (j + dr * k3j);
  j += (dr / 6) * (k1j + 2.0 * k2j + 2.0 * k3j + k4j);
  y += (dr / 6) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
}

int lattice_index(const GridSpec& g, double x, const char* what) {
  const double u = (x - g.start) / g.h;
  const int i = static_cast<int>(std::lround(u));
  if (std::abs(u - i) > 1e-6)
    throw DomainError(std::string(what) + " is not aligned with the sample lattice");
  return i;
}

}  // namespace

bool jacobi_invertible(const Mat& j, double threshold) {
  const int m = static_cast<int>(j.rows());
  // unit scale floor keeps the 1x1 case meaningful
  const double scale = std::max(1.0, j.norm());
  return std::abs(j.determinant()) > threshold * std::pow(scale, m);
}

std::optional<Mat> shape_matrix(const Mat& j, const Mat& y, double threshold) {
  if (!jacobi_invertible(j, threshold)) return std::nullopt;
  return Mat(y * j.inverse());
}

JacobiSlice jacobi_matrix(const CurvatureCurve& rmat, double t, const GridSpec& r_out) {
  const double h = r_out.h;
  if (std::abs(h - 2.0 * rmat.grid.h) > 1e-12 * h)
    throw DomainError("jacobi_matrix: curvature curve must be sampled at half the node step");
  const double span_lo = rmat.grid.at(rmat.lo_index), span_hi = rmat.grid.at(rmat.hi_index);
  if (t < span_lo - 1e-9 || t > span_hi + 1e-9)
    throw DomainError("jacobi_matrix: base time outside the curvature span");

  const int m = static_cast<int>(rmat.rmat[static_cast<size_t>(rmat.lo_index)].rows());
  JacobiSlice out;
  out.t = t;
  out.r_grid = r_out;
  out.j.assign(static_cast<size_t>(r_out.count), Mat::Zero(m, m));
  out.y.assign(static_cast<size_t>(r_out.count), Mat::Zero(m, m));

  const int it = lattice_index(rmat.grid, t, "base time");
  // offset of t relative to the output grid, in full steps
  const double off = (t - r_out.start) / h;
  const int i_t = static_cast<int>(std::lround(off));
  if (std::abs(off - i_t) > 1e-6)
    throw DomainError("jacobi_matrix: base time not aligned with the output grid");

  for (int dir : {+1, -1}) {
    Mat j = Mat::Zero(m, m), y = Mat::Identity(m, m);
    int ic = it;  // curvature-lattice index of current r
    int io = i_t;
    if (io >= 0 && io < r_out.count && dir > 0) {
      out.j[static_cast<size_t>(io)] = j;
      out.y[static_cast<size_t>(io)] = y;
    }
    while (true) {
      const int io_next = io + dir;
      if (dir > 0 && io_next >= r_out.count) break;
      if (dir < 0 && io_next < 0) break;
      const int ic_next = ic + 2 * dir;
      if (ic_next < rmat.lo_index || ic_next > rmat.hi_index)
        throw DomainError("jacobi_matrix: output grid exceeds the curvature span");
      rk4_step(j, y, rmat.at_node(ic), rmat.at_node(ic + dir), rmat.at_node(ic_next),
               dir > 0 ? h : -h);
      io = io_next;
      ic = ic_next;
      if (io >= 0 && io < r_out.count) {
        out.j[static_cast<size_t>(io)] = j;
        out.y[static_cast<size_t>(io)] = y;
      }
    }
  }
  return out;
}

void jacobi_pair_at(const CurvatureCurve& rmat, double t, double r, Mat& j_out, Mat& y_out,
                    int substeps_per_node) {
  const int m = static_cast<int>(rmat.rmat[static_cast<size_t>(rmat.lo_index)].rows());
  Mat j = Mat::Zero(m, m), y = Mat::Identity(m, m);
  const double span = r - t;
  const int steps = std::max(1, static_cast<int>(std::ceil(std::abs(span) / rmat.grid.h)) *
                                    substeps_per_node);
  const double dr = span / steps;
  double rc = t;
  for (int s = 0; s < steps; ++s) {
    rk4_step(j, y, rmat.at(rc), rmat.at(rc + dr / 2), rmat.at(rc + dr), dr);
    rc += dr;
  }
  j_out = j;
  y_out = y;
}

Mat jacobi_solution_operator(const CurvatureCurve& rmat, double t, double s) {
  const int m = static_cast<int>(rmat.rmat[static_cast<size_t>(rmat.lo_index)].rows());
  Mat J(m, 2 * m), Y(m, 2 * m);
  J << Mat::Identity(m, m), Mat::Zero(m, m);
  Y << Mat::Zero(m, m), Mat::Identity(m, m);
  const double span = s - t;
  Mat U(2 * m, 2 * m);
  if (span == 0.0) {
    U.setIdentity();
    return U;
  }
  const int steps = std::max(1, static_cast<int>(std::ceil(std::abs(span) / rmat.grid.h)) * 2);
  const double dr = span / steps;
  double rc = t;
  for (int k = 0; k < steps; ++k) {
    rk4_step(J, Y, rmat.at(rc), rmat.at(rc + dr / 2), rmat.at(rc + dr), dr);
    rc += dr;
  }
  U.topRows(m) = J;
  U.bottomRows(m) = Y;
  return U;
}

std::optional<Mat> FrameMatrices::shape(int ir, int it) const {
  return shape_matrix(jm(ir, it), ym(ir, it), det_threshold);
}

std::optional<Mat> FrameMatrices::inverse_shape(int ir, int it) const {
  // k = j y^-1 covers both the direct inverse of s and the limit extension
  // across the diagonal (where j is singular but y is not).
  const Mat& yv = ym(ir, it);
  if (!jacobi_invertible(yv, det_threshold)) return std::nullopt;
  return Mat(jm(ir, it) * yv.inverse());
}

FrameMatrices forward_frame_matrices(const CurvatureCurve& rmat, int dim, double epsilon,
                                     double horizon) {
  const double h = 2.0 * rmat.grid.h;
  const int neps = static_cast<int>(std::lround(epsilon / h));
  const int nhor = static_cast<int>(std::lround(horizon / h));
  if (std::abs(neps * h - epsilon) > 1e-9 || std::abs(nhor * h - horizon) > 1e-9)
    throw ConfigError("epsilon and horizon must be multiples of the grid step");

  FrameMatrices fm;
  fm.dim = dim;
  fm.r_grid = GridSpec{-epsilon, h, 2 * neps + 1};
  fm.t_grid = GridSpec{-horizon, h, nhor + neps + 1};
  fm.j.resize(static_cast<size_t>(fm.r_grid.count) * fm.t_grid.count);
  fm.y.resize(fm.j.size());
  fm.rmat_r.resize(static_cast<size_t>(fm.r_grid.count));
  for (int ir = 0; ir < fm.r_grid.count; ++ir)
    fm.rmat_r[static_cast<size_t>(ir)] = rmat.at_node(lattice_index(rmat.grid, fm.r_grid.at(ir), "r node"));

  for (int it = 0; it < fm.t_grid.count; ++it) {
    const JacobiSlice slice = jacobi_matrix(rmat, fm.t_grid.at(it), fm.r_grid);
    for (int ir = 0; ir < fm.r_grid.count; ++ir) {
      fm.j[static_cast<size_t>(fm.idx(ir, it))] = slice.j[static_cast<size_t>(ir)];
      fm.y[static_cast<size_t>(fm.idx(ir, it))] = slice.y[static_cast<size_t>(ir)];
    }
  }
  return fm;
}

std::optional<double> riccati_residual(const FrameMatrices& fm, int ir, int it) {
  const int nr = fm.r_grid.count;
  if (nr < 5) return std::nullopt;
  const int lo = std::clamp(ir - 2, 0, nr - 5);
  Mat window[5];
  for (int k = 0; k < 5; ++k) {
    auto s = fm.shape(lo + k, it);
    if (!s) return std::nullopt;
    window[k] = *s;
  }
  const Eigen::VectorXd w = gridmath::uniform_deriv_weights(5, ir - lo, 1);
  Mat ds = Mat::Zero(window[0].rows(), window[0].cols());
  for (int k = 0; k < 5; ++k) ds += w[k] * window[k];
  ds /= fm.r_grid.h;
  const Mat s = window[ir - lo];
  return (ds + s * s + fm.rmat_r[static_cast<size_t>(ir)]).norm();
}

SphereDataGrid::SphereDataGrid(int dim, double epsilon, double horizon, GridSpec r_grid,
                               GridSpec t_grid, std::vector<Mat> s, std::vector<uint8_t> valid)
    : dim_(dim),
      epsilon_(epsilon),
      horizon_(horizon),
      r_grid_(r_grid),
      t_grid_(t_grid),
      s_(std::move(s)),
      valid_(std::move(valid)) {
  if (s_.size() != valid_.size() ||
      s_.size() != static_cast<size_t>(r_grid_.count) * t_grid_.count)
    throw ConfigError("sphere data grid: inconsistent storage sizes");
}

bool SphereDataGrid::valid_at(int ir, int it) const {
  return valid_[static_cast<size_t>(idx(ir, it))] != 0;
}

const Mat& SphereDataGrid::shape_at(int ir, int it) const {
  const double r = r_grid_.at(ir);
  if (std::abs(r) > epsilon_ + 1e-12) {
    ++audit_.reads_outside;
    if (strict_)
      throw SolverError("strict-data: shape operator read outside I0 at r = " + std::to_string(r));
  } else {
    ++audit_.reads_inside;
  }
  if (!valid_at(ir, it))
    throw DomainError("reading an undefined shape sample at (r, t) = (" + std::to_string(r) +
                      ", " + std::to_string(t_grid_.at(it)) + ")");
  return s_[static_cast<size_t>(idx(ir, it))];
}

SphereDataGrid sphere_data_from(const FrameMatrices& fm, double epsilon, double horizon) {
  const int nr = fm.r_grid.count, nt = fm.t_grid.count;
  const int m = fm.dim - 1;
  std::vector<Mat> s(static_cast<size_t>(nr) * nt, Mat::Zero(m, m));
  std::vector<uint8_t> valid(s.size(), 0);
  for (int it = 0; it < nt; ++it)
    for (int ir = 0; ir < nr; ++ir) {
      auto sh = fm.shape(ir, it);
      if (sh) {
        s[static_cast<size_t>(fm.idx(ir, it))] = *sh;
        valid[static_cast<size_t>(fm.idx(ir, it))] = 1;
      }
    }
  return SphereDataGrid(fm.dim, epsilon, horizon, fm.r_grid, fm.t_grid, std::move(s),
                        std::move(valid));
}

ForwardProducts synthesize_sphere_data(const ManifoldChart& chart, const GeodesicFrame& frame,
                                       double epsilon, double horizon,
                                       const SynthesisOptions& opts) {
  if (!(epsilon > 0.0) || !(epsilon < horizon))
    throw ConfigError("synthesis requires 0 < epsilon < horizon");
  const double h = epsilon / opts.nodes_per_epsilon;
  if (1.0 / h < 9.0)
    throw ConfigError("grid too coarse: fewer than 9 t-samples per unit");
  if (h > epsilon / 8.0 + 1e-15) throw ConfigError("grid too coarse: t-spacing must be <= epsilon/8");
  if (std::abs(frame.grid.h - h / 2) > 1e-12 * h)
    throw ConfigError("frame must be sampled at half the data grid step");
  const double lo = frame.grid.at(frame.lo_index), hi = frame.grid.at(frame.hi_index);
  if (lo > -horizon + 1e-9 || hi < epsilon - 1e-9)
    throw ConfigError("geodesic frame does not cover [-horizon, epsilon]" +
                      std::string(frame.truncated_lo || frame.truncated_hi
                                      ? " (truncated at the chart boundary)"
                                      : ""));

  const CurvatureCurve rc = curvature_along(frame, chart);
  ForwardProducts out{forward_frame_matrices(rc, chart.dim(), epsilon, horizon), SphereDataGrid{}};
  out.grid = sphere_data_from(out.truth, epsilon, horizon);
  return out;
}

// ---------------------------------------------------------------------------
// Grid file format

void write_grid_csv(const SphereDataGrid& grid, std::ostream& out) {
  out.precision(17);
  out << "findix-sphere-data,v1\n";
  out << "dim," << grid.dim() << "\n";
  out << "epsilon," << grid.epsilon() << "\n";
  out << "horizon," << grid.horizon() << "\n";
  out << "r_grid," << grid.r_grid().start << ',' << grid.r_grid().h << ',' << grid.r_grid().count
      << "\n";
  out << "t_grid," << grid.t_grid().start << ',' << grid.t_grid().h << ',' << grid.t_grid().count
      << "\n";
  const int m = grid.dim() - 1;
  out << "columns,r,t,valid";
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b) out << ",s" << a + 1 << b + 1;
  out << "\n";
  for (int it = 0; it < grid.t_grid().count; ++it)
    for (int ir = 0; ir < grid.r_grid().count; ++ir) {
      out << grid.r_grid().at(ir) << ',' << grid.t_grid().at(it) << ','
          << (grid.valid_at(ir, it) ? 1 : 0);
      const bool valid = grid.valid_at(ir, it);
      Mat zero = Mat::Zero(m, m);
      const Mat& s = valid ? grid.shape_at(ir, it) : zero;
      for (int a = 0; a < m; ++a)
        for (int b = 0; b < m; ++b) out << ',' << s(a, b);
      out << "\n";
    }
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, int line_no) {
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw IoError("grid file: bad number '" + s + "' at line " + std::to_string(line_no));
  }
}

}  // namespace

SphereDataGrid read_grid_csv(std::istream& in) {
  std::string line;
  int line_no = 0;
  auto next_line = [&]() {
    if (!std::getline(in, line))
      throw IoError("grid file: truncated at line " + std::to_string(line_no + 1));
    ++line_no;
  };

  next_line();
  if (line != "findix-sphere-data,v1")
    throw IoError("grid file: unrecognized header at line 1");
  next_line();
  auto f = split_csv(line);
  if (f.size() != 2 || f[0] != "dim") throw IoError("grid file: expected dim at line 2");
  const int dim = static_cast<int>(parse_double(f[1], line_no));
  next_line();
  f = split_csv(line);
  if (f.size() != 2 || f[0] != "epsilon") throw IoError("grid file: expected epsilon at line 3");
  const double epsilon = parse_double(f[1], line_no);
  next_line();
  f = split_csv(line);
  if (f.size() != 2 || f[0] != "horizon") throw IoError("grid file: expected horizon at line 4");
  const double horizon = parse_double(f[1], line_no);

  auto parse_grid = [&](const char* name) {
    next_line();
    auto g = split_csv(line);
    if (g.size() != 4 || g[0] != name)
      throw IoError("grid file: expected " + std::string(name) + " at line " +
                    std::to_string(line_no));
    GridSpec spec;
    spec.start = parse_double(g[1], line_no);
    spec.h = parse_double(g[2], line_no);
    spec.count = static_cast<int>(parse_double(g[3], line_no));
    if (spec.count <= 0 || spec.h <= 0)
      throw IoError("grid file: bad " + std::string(name) + " at line " + std::to_string(line_no));
    return spec;
  };
  const GridSpec r_grid = parse_grid("r_grid");
  const GridSpec t_grid = parse_grid("t_grid");
  next_line();  // columns header

  const int m = dim - 1;
  const size_t cells = static_cast<size_t>(r_grid.count) * t_grid.count;
  std::vector<Mat> s(cells, Mat::Zero(m, m));
  std::vector<uint8_t> valid(cells, 0);
  for (int it = 0; it < t_grid.count; ++it)
    for (int ir = 0; ir < r_grid.count; ++ir) {
      next_line();
      f = split_csv(line);
      if (static_cast<int>(f.size()) != 3 + m * m)
        throw IoError("grid file: wrong column count at line " + std::to_string(line_no));
      const size_t cell = static_cast<size_t>(it) * r_grid.count + ir;
      valid[cell] = parse_double(f[2], line_no) != 0.0 ? 1 : 0;
      Mat sm(m, m);
      for (int a = 0; a < m; ++a)
        for (int b = 0; b < m; ++b)
          sm(a, b) = parse_double(f[static_cast<size_t>(3 + a * m + b)], line_no);
      s[cell] = sm;
    }
  return SphereDataGrid(dim, epsilon, horizon, r_grid, t_grid, std::move(s), std::move(valid));
}

}  // namespace findix
