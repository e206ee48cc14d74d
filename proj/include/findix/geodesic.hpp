#ifndef FINDIX_GEODESIC_HPP
#define FINDIX_GEODESIC_HPP

#include <iosfwd>
#include <vector>

#include "findix/chart.hpp"
#include "findix/types.hpp"

namespace findix {

struct IntegratorOptions {
  double abs_tol = 1e-10;
  double rel_tol = 1e-10;
  bool reorthonormalize = true;  // Gram-Schmidt against g_v each accepted step
};

// Unit-speed geodesic with a parallel g-orthonormal frame, sampled on a
// uniform grid that always contains t = 0.  Column n of `frame` is the unit
// velocity; columns 1..n-1 span the normal space.
struct GeodesicFrame {
  std::string chart_id;
  int dim = 0;
  GridSpec grid;
  std::vector<Vec> x, v;
  std::vector<Mat> frame;  // n x n, columns f_1..f_n
  std::vector<Mat> gv;     // fundamental tensor at (x(t), v(t))
  bool truncated_lo = false, truncated_hi = false;
  int lo_index = 0, hi_index = -1;  // valid sample range

  int index_of(double t) const { return grid.index_of(t); }
  double time_at(int i) const { return grid.at(i); }
  bool valid_index(int i) const { return i >= lo_index && i <= hi_index; }

  // Components of a world vector in the normal frame f_1..f_{n-1}.
  Vec normal_components(int i, const Vec& w) const;
  Vec from_normal_components(int i, const Vec& c) const;
};

GeodesicFrame integrate_geodesic(const ManifoldChart& chart, const Vec& x0, const Vec& v0,
                                 double t_lo, double t_hi, double dt,
                                 const IntegratorOptions& opts = {});

// Field along the geodesic expressed in the parallel frame; entries may be
// (n-1)-vectors or (n-1)x(n-1) matrices, one per sample.
struct FrameField {
  std::vector<Mat> values;
};

// D_t of a frame field: componentwise differentiation (the frame is
// parallel), 4th-order stencils on the sample grid.
FrameField covariant_derivative(const GeodesicFrame& frame, const FrameField& field);

// Directional curvature along the geodesic in frame components:
// rmat_jk = g(f_j, R f_k), j,k = 1..n-1, sampled at the frame nodes.
struct CurvatureCurve {
  GridSpec grid;
  int lo_index = 0, hi_index = -1;
  std::vector<Mat> rmat;
  bool any_warning = false;

  const Mat& at_node(int i) const { return rmat[static_cast<size_t>(i)]; }
  Mat at(double t) const;  // cubic interpolation between nodes
};

CurvatureCurve curvature_along(const GeodesicFrame& frame, const ManifoldChart& chart);

// CSV serialization: t, x^1..x^n, v^1..v^n, frame entries row-major.
void write_frame_csv(const GeodesicFrame& frame, std::ostream& out);

}  // namespace findix

#endif  // FINDIX_GEODESIC_HPP
