#ifndef FINDIX_INVERSE_HPP
#define FINDIX_INVERSE_HPP

#include <array>
#include <optional>
#include <vector>

#include "findix/forward.hpp"

namespace findix {

// Q(A1,A2,A3,B0,B1,B2) = A3 B0^-1 - 3 A2 B0^-1 B1 B0^-1
//   + 6 A1 B0^-1 B1 B0^-1 B1 B0^-1 - 3 A1 B0^-1 B2 B0^-1.
// Well defined only for invertible B0; invariant under right-multiplication
// of all six inputs by one invertible matrix.
Mat q_function(const Mat& A1, const Mat& A2, const Mat& A3, const Mat& B0, const Mat& B1,
               const Mat& B2);

// Curvature on I0 from the diagonal limit of the inverse shape operator:
// one-sided third t-derivative of k at t = r, times -1/2.
struct CurvatureEstimate {
  int dim = 0;
  GridSpec r_grid;
  std::vector<Mat> rmat;
  bool conditioning_warning = false;

  const Mat& at_node(int i) const { return rmat[static_cast<size_t>(i)]; }
  Mat at(double r) const;  // cubic interpolation inside I0
};

CurvatureEstimate estimate_curvature_on_I0(const SphereDataGrid& grid);

// The eight-matrix state (j_k, y_k), k = 0..3, at one (r, t).
struct StateZ {
  std::array<Mat, 4> j, y;
};

struct InitSegment {
  int anchor_column = 0;  // r-grid column index of the anchor
  int t_begin = 0, t_end = 0;
  bool fresh = false;  // first window (identity anchor) vs chained extension
};

struct InitializedState {
  int dim = 0;
  double epsilon = 0.0;
  GridSpec t_grid;
  std::vector<StateZ> z;  // at r = 0 for every t-node
  std::vector<InitSegment> segments;
};

struct InitOptions {
  // Anchor segments require ||s||_F <= safe_shape_norm / epsilon, keeping a
  // conjugate-free margin around them.
  double safe_shape_norm = 4.0;
  int window_nodes = 0;   // 0: epsilon/4 worth of nodes
  int overlap_nodes = 6;  // nodes used to fit the gauge continuation
};

InitializedState initialize_jacobi_at_zero(const SphereDataGrid& grid,
                                           const CurvatureEstimate& rmat_I0,
                                           const InitOptions& opts = {});

struct ConjugatePair {
  double r = 0.0, t = 0.0;
};

struct BlockDiagnostics {
  double r_top = 0.0, r_bottom = 0.0;
  int picard_iterations = 0;
  double contraction = 0.0;            // last observed sweep-to-sweep ratio
  double alpha_hat = 0.0;              // ||Q|| at the block corner plus margin
  double enforcement_residual = 0.0;   // max ||j0(r,r)|| before reset
  double delta = 0.0;
};

struct MarchOptions {
  double delta = 0.0;      // 0: epsilon/4
  double delta_min = 0.0;  // 0: epsilon/64
  double picard_tol = 1e-12;
  int max_picard = 50;
  bool strict_data = false;
};

struct ReconstructionResult {
  int dim = 0;
  double epsilon = 0.0, horizon = 0.0;
  GridSpec t_grid;  // full I1 lattice [-T, eps]
  // rmat on the same lattice: marched for r <= 0, I0 estimate for r > 0
  std::vector<Mat> rmat;
  std::vector<StateZ> z_at_zero;
  // j, y on the I0 columns for every t (consistency checks, fast recovery)
  GridSpec r_data_grid;
  std::vector<Mat> j_data, y_data;
  std::vector<ConjugatePair> conjugates;  // nontrivial: diagonal pairs excluded
  std::vector<BlockDiagnostics> blocks;
  double max_enforcement_residual = 0.0;
  double delta_used = 0.0;
  DataAudit audit;

  int idx_data(int ir, int it) const { return it * r_data_grid.count + ir; }
  const Mat& rmat_at_node(int i) const { return rmat[static_cast<size_t>(i)]; }
  Mat rmat_at(double r) const;
};

// March the closed ODE system for Z from r = 0 down to -T in blocks of
// width delta, running the fixed-point iteration on each diagonal square
// and then propagating all t-slices with the extracted curvature.  Also
// extends the state upward through (0, epsilon] with the I0 estimate.
ReconstructionResult march_reconstruct(const SphereDataGrid& grid, const InitializedState& z0,
                                       const CurvatureEstimate& rmat_I0,
                                       const MarchOptions& opts = {});

struct ShapeAndK {
  std::optional<Mat> s, k;
};

// s = y j^-1 where j is invertible; k = j y^-1 where y is invertible (the
// limit extension across the diagonal).  (r, t) snaps to the lattice when
// within half a step; other r values re-integrate the slice.
ShapeAndK recover_shape_and_k(const ReconstructionResult& res, double r, double t);

// Nontrivial conjugate pairs located during the march (smallest-singular-
// value dips and determinant sign changes, refined on the interpolant).
std::vector<ConjugatePair> detect_conjugates(const ReconstructionResult& res);

// estimate -> initialize -> march, honoring the strict-data policy.
ReconstructionResult invert_sphere_data(const SphereDataGrid& grid, const MarchOptions& opts = {},
                                        const InitOptions& iopts = {});

}  // namespace findix

#endif  // FINDIX_INVERSE_HPP
