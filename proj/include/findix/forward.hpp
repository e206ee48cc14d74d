#ifndef FINDIX_FORWARD_HPP
#define FINDIX_FORWARD_HPP

#include <iosfwd>
#include <optional>
#include <vector>

#include "findix/geodesic.hpp"

namespace findix {

// Scale-invariant singularity test for the Jacobi matrix: a pair (r, t)
// counts as conjugate when |det j| <= threshold * ||j||_F^(n-1).
bool jacobi_invertible(const Mat& j, double threshold = 1e-8);

// y j^-1 where j is safely invertible; nullopt marks a conjugate pair.
std::optional<Mat> shape_matrix(const Mat& j, const Mat& y, double threshold = 1e-8);

// j(., t), y(., t) on a range of uniform r-nodes.
struct JacobiSlice {
  double t = 0.0;
  GridSpec r_grid;
  std::vector<Mat> j, y;
};

// Integrates d^2_r j = -R(r) j with j(t,t) = 0, d_r j(t,t) = I, sampling on
// r_out nodes.  The curvature curve must be sampled at half the node
// spacing so RK4 midpoints are exact lookups.
JacobiSlice jacobi_matrix(const CurvatureCurve& rmat, double t, const GridSpec& r_out);

// Same initial-value problem evaluated at one arbitrary r (fine RK4
// substeps with interpolated curvature).
void jacobi_pair_at(const CurvatureCurve& rmat, double t, double r, Mat& j_out, Mat& y_out,
                    int substeps_per_node = 4);

// Solution operator of the Jacobi system from time t to time s:
// (J(s), J'(s)) = U(t,s) (J(t), J'(t)), a 2(n-1) x 2(n-1) matrix.
Mat jacobi_solution_operator(const CurvatureCurve& rmat, double t, double s);

// Forward bundle along one geodesic: Jacobi data on r_grid x t_grid plus the
// true curvature at the r-nodes.
struct FrameMatrices {
  int dim = 0;  // manifold dimension n; matrices are (n-1) square
  GridSpec r_grid, t_grid;
  std::vector<Mat> j, y;       // indexed it * r_count + ir
  std::vector<Mat> rmat_r;     // truth curvature at r-nodes
  double det_threshold = 1e-8;

  int idx(int ir, int it) const { return it * r_grid.count + ir; }
  const Mat& jm(int ir, int it) const { return j[static_cast<size_t>(idx(ir, it))]; }
  const Mat& ym(int ir, int it) const { return y[static_cast<size_t>(idx(ir, it))]; }
  std::optional<Mat> shape(int ir, int it) const;
  std::optional<Mat> inverse_shape(int ir, int it) const;  // k = s^-1 or j y^-1 in the limit sense
};

FrameMatrices forward_frame_matrices(const CurvatureCurve& rmat, int dim, double epsilon,
                                     double horizon);

// || d_r s + s^2 + rmat || at a grid cell (5-point d_r); nullopt when the
// stencil touches an undefined shape operator.
std::optional<double> riccati_residual(const FrameMatrices& fm, int ir, int it);

// Read instrumentation for the information-hygiene audit.
struct DataAudit {
  long long reads_inside = 0;
  long long reads_outside = 0;  // reads at |r| > epsilon
};

// The measurement: shape operators of geodesic spheres, sampled on
// I0 x I1 = [-eps, eps] x [-T, eps], with validity mask.
class SphereDataGrid {
 public:
  SphereDataGrid() = default;
  SphereDataGrid(int dim, double epsilon, double horizon, GridSpec r_grid, GridSpec t_grid,
                 std::vector<Mat> s, std::vector<uint8_t> valid);

  int dim() const { return dim_; }
  double epsilon() const { return epsilon_; }
  double horizon() const { return horizon_; }
  const GridSpec& r_grid() const { return r_grid_; }
  const GridSpec& t_grid() const { return t_grid_; }

  bool valid_at(int ir, int it) const;
  const Mat& shape_at(int ir, int it) const;  // audited access; throws on invalid cell

  // Strict-data policy: any read outside |r| <= epsilon throws.
  void set_strict(bool strict) const { strict_ = strict; }
  const DataAudit& audit() const { return audit_; }
  void reset_audit() const { audit_ = DataAudit{}; }

 private:
  int idx(int ir, int it) const { return it * r_grid_.count + ir; }

  int dim_ = 0;
  double epsilon_ = 0.0, horizon_ = 0.0;
  GridSpec r_grid_, t_grid_;
  std::vector<Mat> s_;
  std::vector<uint8_t> valid_;
  mutable DataAudit audit_;
  mutable bool strict_ = false;
};

struct SynthesisOptions {
  int nodes_per_epsilon = 128;  // data grid step h = epsilon / nodes_per_epsilon
};

// Full forward synthesis along the frame's geodesic.  The frame must cover
// [-horizon, epsilon].  Returns the data grid; the truth bundle is exposed
// separately so the inverse path never needs to touch it.
struct ForwardProducts {
  FrameMatrices truth;
  SphereDataGrid grid;
};

ForwardProducts synthesize_sphere_data(const ManifoldChart& chart, const GeodesicFrame& frame,
                                       double epsilon, double horizon,
                                       const SynthesisOptions& opts = {});

SphereDataGrid sphere_data_from(const FrameMatrices& fm, double epsilon, double horizon);

// CSV round trip, bit exact.
void write_grid_csv(const SphereDataGrid& grid, std::ostream& out);
SphereDataGrid read_grid_csv(std::istream& in);

}  // namespace findix

#endif  // FINDIX_FORWARD_HPP
