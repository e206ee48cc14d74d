#include "findix/inverse.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "findix/gridmath.hpp"

namespace findix {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

void require_invertible(const Mat& B0, const char* who) {
  const double d = std::abs(B0.determinant());
  const double scale = std::max(1.0, B0.norm());
  if (d <= 1e-12 * std::pow(scale, B0.rows())) {
    std::ostringstream msg;
    msg << who << ": matrix is singular (|det| = " << d << ", cond ~ "
        << (d > 0 ? B0.norm() * B0.inverse().norm() : std::numeric_limits<double>::infinity())
        << ")";
    throw DomainError(msg.str());
  }
}

}  // namespace

Mat q_function(const Mat& A1, const Mat& A2, const Mat& A3, const Mat& B0, const Mat& B1,
               const Mat& B2) {
  require_invertible(B0, "q_function: B0");
  const Mat P = B0.inverse();
  const Mat PB1P = P * B1 * P;
  return A3 * P - 3.0 * A2 * PB1P + 6.0 * A1 * PB1P * B1 * P - 3.0 * A1 * P * B2 * P;
}

// ---------------------------------------------------------------------------
// Curvature on I0 from the diagonal of the inverse shape operator

Mat CurvatureEstimate::at(double r) const {
  const double lo = r_grid.start, hi = r_grid.back();
  if (r < lo - 1e-9 || r > hi + 1e-9)
    throw DomainError("curvature estimate queried outside I0");
  return gridmath::interp_cubic(rmat, lo, r_grid.h, std::clamp(r, lo, hi));
}

CurvatureEstimate estimate_curvature_on_I0(const SphereDataGrid& grid) {
  const int m = grid.dim() - 1;
  const GridSpec& rg = grid.r_grid();
  const GridSpec& tg = grid.t_grid();
  const double h = tg.h;
  if (tg.count < 5) throw ConfigError("curvature estimate: need at least 5 t-samples");

  CurvatureEstimate est;
  est.dim = grid.dim();
  est.r_grid = rg;
  est.rmat.resize(static_cast<size_t>(rg.count));

  // one-sided stencil below the diagonal: nodes t = r, r-h, ..., r-4h
  std::vector<double> pos = {0.0, -1.0, -2.0, -3.0, -4.0};
  const Eigen::VectorXd w3 = gridmath::fd_weights(0.0, pos, 3).col(3);

  for (int ir = 0; ir < rg.count; ++ir) {
    const double r = rg.at(ir);
    const int it_diag = tg.index_of(r);
    if (it_diag < 4)
      throw ConfigError("curvature estimate: t-grid does not extend below the diagonal");
    Mat acc = Mat::Zero(m, m);  // k(r, r) = 0 by the continuity extension
    for (int k = 1; k <= 4; ++k) {
      const int it = it_diag - k;
      if (!grid.valid_at(ir, it))
        throw SolverError(
            "curvature estimate: conjugate pair too close to the diagonal inside I0 at r = " +
            std::to_string(r) + " (epsilon too large?)");
      const Mat& s = grid.shape_at(ir, it);
      if (!jacobi_invertible(s, 1e-10)) est.conditioning_warning = true;
      acc += w3[k] * s.inverse();
    }
    est.rmat[static_cast<size_t>(ir)] = -0.5 * acc / (h * h * h);
  }
  return est;
}

// ---------------------------------------------------------------------------
// Initialization: anchor segments avoiding conjugate pairs

namespace {

// RK4 step of (j, y)' = (y, -R j), curvature at start/mid/end.
void rk4_jacobi(Mat& j, Mat& y, const Mat& R0, const Mat& Rm, const Mat& R1, double dr) {
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

struct SliceColumns {
  bool have = false;
  std::vector<Mat> j, y;  // at every I0 column
};

class Initializer {
 public:
  Initializer(const SphereDataGrid& grid, const CurvatureEstimate& est, const InitOptions& opts)
      : grid_(grid), est_(est), opts_(opts) {
    nr_ = grid.r_grid().count;
    nt_ = grid.t_grid().count;
    m_ = grid.dim() - 1;
    h_ = grid.t_grid().h;
    ir0_ = grid.r_grid().index_of(0.0);
    s_max_ = opts.safe_shape_norm / grid.epsilon();
    window_ = opts.window_nodes > 0
                  ? opts.window_nodes
                  : std::max(8, static_cast<int>(std::lround(grid.epsilon() / 4.0 / h_)));
    build_score_table();
    slices_.resize(static_cast<size_t>(nt_));
  }

  InitializedState run() {
    seed_first_window();
    while (hi_cov_ < nt_ - 1) extend(+1);
    while (lo_cov_ > 0) extend(-1);

    InitializedState out;
    out.dim = grid_.dim();
    out.epsilon = grid_.epsilon();
    out.t_grid = grid_.t_grid();
    out.segments = segments_;
    out.z.resize(static_cast<size_t>(nt_));

    std::vector<Mat> j0(static_cast<size_t>(nt_)), y0(static_cast<size_t>(nt_));
    for (int it = 0; it < nt_; ++it) {
      j0[static_cast<size_t>(it)] = slices_[static_cast<size_t>(it)].j[static_cast<size_t>(ir0_)];
      y0[static_cast<size_t>(it)] = slices_[static_cast<size_t>(it)].y[static_cast<size_t>(ir0_)];
    }
    for (int it = 0; it < nt_; ++it) {
      out.z[static_cast<size_t>(it)].j[0] = j0[static_cast<size_t>(it)];
      out.z[static_cast<size_t>(it)].y[0] = y0[static_cast<size_t>(it)];
    }
    for (int k = 1; k <= 3; ++k) {
      const auto dj = gridmath::deriv_on_grid(j0, h_, k);
      const auto dy = gridmath::deriv_on_grid(y0, h_, k);
      for (int it = 0; it < nt_; ++it) {
        out.z[static_cast<size_t>(it)].j[static_cast<size_t>(k)] = dj[static_cast<size_t>(it)];
        out.z[static_cast<size_t>(it)].y[static_cast<size_t>(k)] = dy[static_cast<size_t>(it)];
      }
    }
    return out;
  }

 private:
  void build_score_table() {
    score_.assign(static_cast<size_t>(nr_) * nt_, std::numeric_limits<double>::infinity());
    for (int ir = 0; ir < nr_; ++ir)
      for (int it = 0; it < nt_; ++it)
        if (grid_.valid_at(ir, it))
          score_[static_cast<size_t>(it) * nr_ + ir] = grid_.shape_at(ir, it).norm();
  }

  double score(int ir, int it) const { return score_[static_cast<size_t>(it) * nr_ + ir]; }
  bool safe(int ir, int it) const { return score(ir, it) <= s_max_; }

  // Anchor the slice at column `col` with values (j_a, y_a) and fill all I0
  // columns by the Jacobi equation with the estimated curvature.
  void propagate_slice(int it, int col, const Mat& j_a, const Mat& y_a) {
    auto& sl = slices_[static_cast<size_t>(it)];
    sl.have = true;
    sl.j.assign(static_cast<size_t>(nr_), Mat::Zero(m_, m_));
    sl.y.assign(static_cast<size_t>(nr_), Mat::Zero(m_, m_));
    sl.j[static_cast<size_t>(col)] = j_a;
    sl.y[static_cast<size_t>(col)] = y_a;
    for (int dir : {+1, -1}) {
      Mat j = j_a, y = y_a;
      for (int ir = col; ir + dir >= 0 && ir + dir < nr_; ir += dir) {
        const double r = grid_.r_grid().at(ir);
        const double dr = dir * h_;
        rk4_jacobi(j, y, est_.at(r), est_.at(r + dr / 2), est_.at(r + dr), dr);
        sl.j[static_cast<size_t>(ir + dir)] = j;
        sl.y[static_cast<size_t>(ir + dir)] = y;
      }
    }
  }

  // Longest run of anchor-safe nodes over all columns.
  void seed_first_window() {
    int best_col = -1, best_begin = 0, best_len = 0;
    double best_score = std::numeric_limits<double>::infinity();
    for (int ir = 0; ir < nr_; ++ir) {
      int run_begin = -1;
      double run_max = 0.0;
      for (int it = 0; it <= nt_; ++it) {
        const bool ok = it < nt_ && safe(ir, it);
        if (ok) {
          if (run_begin < 0) {
            run_begin = it;
            run_max = 0.0;
          }
          run_max = std::max(run_max, score(ir, it));
        } else if (run_begin >= 0) {
          const int len = it - run_begin;
          if (len > best_len || (len == best_len && run_max < best_score)) {
            best_col = ir;
            best_begin = run_begin;
            best_len = len;
            best_score = run_max;
          }
          run_begin = -1;
        }
      }
    }
    if (best_col < 0 || best_len < opts_.overlap_nodes + 2)
      throw SolverError("initialization: no conjugate-free anchor segment in the data");

    const Mat I = Mat::Identity(m_, m_);
    for (int it = best_begin; it < best_begin + best_len; ++it)
      propagate_slice(it, best_col, I, grid_.shape_at(best_col, it));
    lo_cov_ = best_begin;
    hi_cov_ = best_begin + best_len - 1;
    segments_.push_back(InitSegment{best_col, lo_cov_, hi_cov_, true});
  }

  // Extend coverage past one edge by a chained window: pick the best
  // conditioned column, continue its known gauge invertibly, and anchor the
  // new slices on it.
  void extend(int dir) {
    const int edge = dir > 0 ? hi_cov_ : lo_cov_;
    const int ov = opts_.overlap_nodes;
    int want = window_;
    while (true) {
      const int new_end = dir > 0 ? std::min(nt_ - 1, edge + want) : std::max(0, edge - want);
      const int w_lo = dir > 0 ? edge - ov + 1 : new_end;
      const int w_hi = dir > 0 ? new_end : edge + ov - 1;
      int best_col = -1;
      double best = std::numeric_limits<double>::infinity();
      for (int ir = 0; ir < nr_; ++ir) {
        double worst = 0.0;
        for (int it = w_lo; it <= w_hi && worst < best; ++it)
          worst = std::max(worst, score(ir, it));
        if (worst <= s_max_ && worst < best) {
          best = worst;
          best_col = ir;
        }
      }
      if (best_col >= 0) {
        apply_window(dir, edge, new_end, best_col);
        return;
      }
      if (want <= 4) {
        std::ostringstream msg;
        msg << "initialization: no anchor column is conjugate-free over t in ["
            << grid_.t_grid().at(std::min(w_lo, w_hi)) << ", "
            << grid_.t_grid().at(std::max(w_lo, w_hi))
            << "]; the data is too sparse around a conjugate time";
        throw SolverError(msg.str());
      }
      want /= 2;
    }
  }

  void apply_window(int dir, int edge, int new_end, int col) {
    const int ov = opts_.overlap_nodes;
    // Gauge curve on the overlap: the known Jacobi matrices at the column.
    std::vector<double> pos(static_cast<size_t>(ov));
    std::vector<Mat> g(static_cast<size_t>(ov));
    for (int k = 0; k < ov; ++k) {
      const int it = edge - dir * (ov - 1 - k);
      pos[static_cast<size_t>(k)] = (it - edge) * h_;
      g[static_cast<size_t>(k)] = slices_[static_cast<size_t>(it)].j[static_cast<size_t>(col)];
    }
    const Eigen::MatrixXd W = gridmath::fd_weights(0.0, pos, 4);
    std::array<Mat, 5> d;  // d[k] = G^(k)(edge)
    for (int k = 0; k <= 4; ++k) {
      Mat acc = Mat::Zero(m_, m_);
      for (int i = 0; i < ov; ++i) acc += W(i, k) * g[static_cast<size_t>(i)];
      d[static_cast<size_t>(k)] = acc;
    }
    const Mat Ge = d[0];
    require_invertible(Ge, "initialization: gauge at the window edge");
    const Mat Gi = Ge.inverse();
    const Mat c1 = Gi * d[1];
    const Mat c2 = Gi * d[2] / 2.0;
    const Mat c3 = Gi * d[3] / 6.0;
    const Mat c4 = Gi * d[4] / 24.0;
    // matrix log series: exp(O(u)) matches the gauge to fourth order
    const Mat O1 = c1;
    const Mat O2 = c2 - 0.5 * c1 * c1;
    const Mat O3 = c3 - 0.5 * (c1 * c2 + c2 * c1) + (1.0 / 3.0) * c1 * c1 * c1;
    const Mat O4 = c4 - 0.5 * (c1 * c3 + c2 * c2 + c3 * c1) +
                   (1.0 / 3.0) * (c1 * c1 * c2 + c1 * c2 * c1 + c2 * c1 * c1) -
                   0.25 * c1 * c1 * c1 * c1;

    for (int it = edge + dir; dir > 0 ? it <= new_end : it >= new_end; it += dir) {
      const double u = (it - edge) * h_;
      const Eigen::MatrixXd Om = (O1 * u + O2 * u * u + O3 * u * u * u + O4 * u * u * u * u);
      const Mat ext = Ge * Om.exp();
      propagate_slice(it, col, ext, Mat(grid_.shape_at(col, it) * ext));
    }
    (dir > 0 ? hi_cov_ : lo_cov_) = new_end;
    segments_.push_back(InitSegment{col, std::min(edge + dir, new_end),
                                    std::max(edge + dir, new_end), false});
  }

  const SphereDataGrid& grid_;
  const CurvatureEstimate& est_;
  InitOptions opts_;
  int nr_ = 0, nt_ = 0, m_ = 0, ir0_ = 0;
  double h_ = 0.0, s_max_ = 0.0;
  int window_ = 0;
  std::vector<double> score_;
  std::vector<SliceColumns> slices_;
  std::vector<InitSegment> segments_;
  int lo_cov_ = 0, hi_cov_ = -1;
};

}  // namespace

InitializedState initialize_jacobi_at_zero(const SphereDataGrid& grid,
                                           const CurvatureEstimate& rmat_I0,
                                           const InitOptions& opts) {
  return Initializer(grid, rmat_I0, opts).run();
}

// ---------------------------------------------------------------------------
// Conjugate pair detection along the sweeps

namespace {

class ConjugateDetector {
 public:
  ConjugateDetector() = default;
  explicit ConjugateDetector(double t) : t_(t) {}

  void push(double r, const Mat& j, std::vector<ConjugatePair>& out, double h) {
    const int m = static_cast<int>(j.rows());
    Node nd{r, j.determinant(), std::pow(std::max(1.0, j.norm()), m)};
    if (count_ < 4) {
      w_[static_cast<size_t>(count_++)] = nd;
    } else {
      w_[0] = w_[1];
      w_[1] = w_[2];
      w_[2] = w_[3];
      w_[3] = nd;
    }
    if (count_ < 4) return;

    const double q0 = w_[0].det / w_[0].scale, q1 = w_[1].det / w_[1].scale,
                 q2 = w_[2].det / w_[2].scale, q3 = w_[3].det / w_[3].scale;
    // sign change across the middle interval: root of the cubic interpolant
    if (q1 != 0.0 && q2 != 0.0 && q1 * q2 < 0.0) {
      emit(refine_root(), out, h);
      return;
    }
    // one-signed dip (even-multiplicity zero): parabola vertex
    if (std::abs(q1) < std::abs(q0) && std::abs(q1) <= std::abs(q2) && std::abs(q1) < 1e-3) {
      double rv = 0.0, qv = 0.0;
      if (parabola_vertex(q0, q1, q2, w_[0].r, w_[1].r, w_[2].r, rv, qv) && std::abs(qv) <= 1e-5)
        emit(rv, out, h);
    }
  }

 private:
  struct Node {
    double r = 0.0, det = 0.0, scale = 1.0;
  };

  double refine_root() const {
    std::vector<double> pos(4);
    for (int i = 0; i < 4; ++i) pos[static_cast<size_t>(i)] = w_[static_cast<size_t>(i)].r;
    auto val = [&](double r) {
      const Eigen::VectorXd wv = gridmath::fd_weights(r, pos, 0).col(0);
      double acc = 0.0;
      for (int i = 0; i < 4; ++i) acc += wv[i] * w_[static_cast<size_t>(i)].det;
      return acc;
    };
    double a = w_[1].r, b = w_[2].r;
    double fa = val(a);
    for (int iter = 0; iter < 60; ++iter) {
      const double c = 0.5 * (a + b);
      const double fc = val(c);
      if (fa * fc <= 0.0) {
        b = c;
      } else {
        a = c;
        fa = fc;
      }
    }
    return 0.5 * (a + b);
  }

  static bool parabola_vertex(double q0, double q1, double q2, double r0, double r1, double r2,
                              double& rv, double& qv) {
    const double h = r1 - r0;
    if (std::abs(r2 - r1 - h) > 1e-9 * std::abs(h)) return false;
    const double a = (q0 - 2 * q1 + q2) / (2 * h * h);
    const double b = (q2 - q0) / (2 * h);
    if (a == 0.0) return false;
    const double du = -b / (2 * a);
    if (std::abs(du) > std::abs(h)) return false;
    rv = r1 + du;
    qv = q1 + b * du + a * du * du;
    return true;
  }

  void emit(double r, std::vector<ConjugatePair>& out, double h) {
    if (std::abs(r - t_) <= 3.5 * h) return;  // trivial diagonal zero
    if (has_last_ && std::abs(r - last_) <= 2.0 * h) return;
    has_last_ = true;
    last_ = r;
    out.push_back(ConjugatePair{r, t_});
  }

  double t_ = 0.0;
  std::array<Node, 4> w_{};
  int count_ = 0;
  bool has_last_ = false;
  double last_ = 0.0;
};

}  // namespace

// ---------------------------------------------------------------------------
// The march

namespace {

struct BlockResult {
  bool converged = false;
  int iterations = 0;
  double contraction = 0.0;
  double alpha_hat = 0.0;
  double enforcement = 0.0;
  std::vector<Mat> rmat;                // at sub-nodes 0..B (descending r)
  std::vector<std::vector<StateZ>> zs;  // [sub-node i][global t] full states
};

class Marcher {
 public:
  Marcher(const SphereDataGrid& grid, const InitializedState& z0, const CurvatureEstimate& est,
          const MarchOptions& opts)
      : grid_(grid), z0_(z0), est_(est), opts_(opts) {
    m_ = grid.dim() - 1;
    tg_ = grid.t_grid();
    h_ = tg_.h;
    nt_ = tg_.count;
    i_zero_ = tg_.index_of(0.0);
    if (z0.t_grid.count != nt_ || std::abs(z0.t_grid.start - tg_.start) > 1e-12)
      throw SolverError("march: initialization grid does not match the data grid");
  }

  ReconstructionResult run() {
    ReconstructionResult res;
    res.dim = grid_.dim();
    res.epsilon = grid_.epsilon();
    res.horizon = grid_.horizon();
    res.t_grid = tg_;
    res.z_at_zero = z0_.z;
    res.rmat.assign(static_cast<size_t>(nt_), Mat::Zero(m_, m_));
    res.r_data_grid = grid_.r_grid();
    res.j_data.assign(static_cast<size_t>(res.r_data_grid.count) * nt_, Mat::Zero(m_, m_));
    res.y_data.assign(res.j_data.size(), Mat::Zero(m_, m_));

    detectors_.reserve(static_cast<size_t>(nt_));
    for (int it = 0; it < nt_; ++it) detectors_.emplace_back(tg_.at(it));

    // r = 0 column
    store_column(res, 0.0, z0_.z);
    for (int it = 0; it < nt_; ++it)
      detectors_[static_cast<size_t>(it)].push(0.0, z0_.z[static_cast<size_t>(it)].j[0],
                                               res.conjugates, h_);

    extend_up(res);

    // the estimate supplies curvature above r = 0
    for (int i = i_zero_; i < nt_; ++i)
      res.rmat[static_cast<size_t>(i)] = est_.at(tg_.at(i));

    march_down(res);

    std::sort(res.conjugates.begin(), res.conjugates.end(),
              [](const ConjugatePair& a, const ConjugatePair& b) {
                return a.t != b.t ? a.t < b.t : a.r < b.r;
              });
    res.audit = grid_.audit();
    return res;
  }

 private:
  void store_column(ReconstructionResult& res, double r, const std::vector<StateZ>& z) {
    if (std::abs(r) > grid_.epsilon() + 1e-12) return;
    const int ir = res.r_data_grid.index_of(r);
    for (int it = 0; it < nt_; ++it) {
      res.j_data[static_cast<size_t>(res.idx_data(ir, it))] = z[static_cast<size_t>(it)].j[0];
      res.y_data[static_cast<size_t>(res.idx_data(ir, it))] = z[static_cast<size_t>(it)].y[0];
    }
  }

  void push_all(ReconstructionResult& res, double r, const std::vector<StateZ>& z) {
    for (int it = 0; it < nt_; ++it)
      detectors_[static_cast<size_t>(it)].push(r, z[static_cast<size_t>(it)].j[0], res.conjugates,
                                               h_);
  }

  void step_state(StateZ& z, const Mat& R0, const Mat& Rm, const Mat& R1, double dr) const {
    for (int k = 0; k < 4; ++k)
      rk4_jacobi(z.j[static_cast<size_t>(k)], z.y[static_cast<size_t>(k)], R0, Rm, R1, dr);
  }

  void extend_up(ReconstructionResult& res) {
    std::vector<StateZ> z = z0_.z;
    for (int i = i_zero_; i < nt_ - 1; ++i) {
      const double r = tg_.at(i);
      const Mat R0 = est_.at(r), Rm = est_.at(r + h_ / 2), R1 = est_.at(r + h_);
      for (int it = 0; it < nt_; ++it) step_state(z[static_cast<size_t>(it)], R0, Rm, R1, h_);
      store_column(res, r + h_, z);
      push_all(res, r + h_, z);
    }
  }

  void march_down(ReconstructionResult& res) {
    const double eps = grid_.epsilon();
    double delta = opts_.delta > 0 ? opts_.delta : eps / 4;
    const double delta_min = opts_.delta_min > 0 ? opts_.delta_min : eps / 64;
    int B = std::max(1, static_cast<int>(std::lround(delta / h_)));
    const int B_min = std::max(1, static_cast<int>(std::lround(delta_min / h_)));

    std::vector<StateZ> frontier = z0_.z;
    int ib0 = i_zero_;
    while (ib0 > 0) {
      const int B_cur = std::min(B, ib0);
      BlockResult blk = run_block(frontier, ib0, B_cur);
      if (!blk.converged) {
        if (B / 2 >= B_min) {
          B /= 2;
          continue;
        }
        std::ostringstream msg;
        msg << "march: fixed-point iteration failed to contract at r = " << tg_.at(ib0)
            << " with the minimum block width " << B * h_ << " (last contraction "
            << blk.contraction << ", alpha_hat " << blk.alpha_hat << ")";
        throw SolverError(msg.str());
      }
      for (int i = 0; i <= B_cur; ++i)
        res.rmat[static_cast<size_t>(ib0 - i)] = blk.rmat[static_cast<size_t>(i)];
      for (int i = 1; i <= B_cur; ++i) {
        const double r = tg_.at(ib0 - i);
        store_column(res, r, blk.zs[static_cast<size_t>(i)]);
        push_all(res, r, blk.zs[static_cast<size_t>(i)]);
      }
      frontier = blk.zs[static_cast<size_t>(B_cur)];
      res.blocks.push_back(BlockDiagnostics{tg_.at(ib0), tg_.at(ib0 - B_cur), blk.iterations,
                                            blk.contraction, blk.alpha_hat, blk.enforcement,
                                            B_cur * h_});
      res.max_enforcement_residual = std::max(res.max_enforcement_residual, blk.enforcement);
      res.delta_used = B * h_;
      ib0 -= B_cur;
    }
  }

  // Fixed-point sweeps on the square [rho0 - B h, rho0]^2, then RK4
  // propagation of all remaining t-slices through the block.
  BlockResult run_block(const std::vector<StateZ>& frontier, int ib0, int B) {
    BlockResult out;
    const int nb = B + 1;
    const int t_base = ib0 - B;  // global index of the lowest square t-node
    auto zb = [&](std::vector<StateZ>& v, int i, int mloc) -> StateZ& {
      return v[static_cast<size_t>(i) * nb + mloc];
    };

    std::vector<StateZ> cur(static_cast<size_t>(nb) * nb), next(static_cast<size_t>(nb) * nb);
    for (int i = 0; i < nb; ++i)
      for (int mloc = 0; mloc < nb; ++mloc)
        zb(cur, i, mloc) = frontier[static_cast<size_t>(t_base + mloc)];

    std::vector<Mat> Qd(static_cast<size_t>(nb));
    std::vector<Mat> fa(static_cast<size_t>(nb)), cum(static_cast<size_t>(nb));
    double prev_diff = -1.0;

    for (int sweep = 1; sweep <= opts_.max_picard; ++sweep) {
      for (int i = 0; i < nb; ++i) {
        const StateZ& dz = zb(cur, i, B - i);
        Qd[static_cast<size_t>(i)] =
            q_function(dz.j[1], dz.j[2], dz.j[3], dz.y[0], dz.y[1], dz.y[2]);
      }
      if (sweep == 1)
        out.alpha_hat = Qd[0].norm() + 0.5;  // margin mirrors the Lipschitz slack

      double diff = 0.0, scale = 0.0;
      for (int mloc = 0; mloc < nb; ++mloc) {
        const StateZ& anchor = frontier[static_cast<size_t>(t_base + mloc)];
        for (int k = 0; k < 4; ++k) {
          const auto ku = static_cast<size_t>(k);
          for (int i = 0; i < nb; ++i) fa[static_cast<size_t>(i)] = zb(cur, i, mloc).y[ku];
          auto cj = gridmath::cumulative_integral(std::span<const Mat>(fa.data(), fa.size()), -h_);
          for (int i = 0; i < nb; ++i) {
            Mat v = anchor.j[ku] + cj[static_cast<size_t>(i)];
            diff = std::max(diff, sup_norm(v - zb(cur, i, mloc).j[ku]));
            zb(next, i, mloc).j[ku] = std::move(v);
          }
          for (int i = 0; i < nb; ++i)
            fa[static_cast<size_t>(i)] = 0.5 * Qd[static_cast<size_t>(i)] * zb(cur, i, mloc).j[ku];
          auto cy = gridmath::cumulative_integral(std::span<const Mat>(fa.data(), fa.size()), -h_);
          for (int i = 0; i < nb; ++i) {
            Mat v = anchor.y[ku] + cy[static_cast<size_t>(i)];
            diff = std::max(diff, sup_norm(v - zb(cur, i, mloc).y[ku]));
            zb(next, i, mloc).y[ku] = std::move(v);
            scale = std::max(scale, sup_norm(v));
          }
        }
      }
      // diagonal consistency: j(r, r) = 0
      double enforce = 0.0;
      for (int i = 0; i < nb; ++i) {
        enforce = std::max(enforce, sup_norm(zb(next, i, B - i).j[0]));
        zb(next, i, B - i).j[0].setZero();
      }
      out.enforcement = enforce;
      std::swap(cur, next);
      out.iterations = sweep;
      if (prev_diff > 0) out.contraction = diff / prev_diff;
      prev_diff = diff;
      const double tol = std::max(opts_.picard_tol, 8.0 * kEps * std::max(1.0, scale));
      if (diff < tol) {
        out.converged = true;
        break;
      }
    }
    if (!out.converged) return out;

    // curvature on the block from the converged diagonal
    out.rmat.resize(static_cast<size_t>(nb));
    for (int i = 0; i < nb; ++i) {
      const StateZ& dz = zb(cur, i, B - i);
      out.rmat[static_cast<size_t>(i)] =
          -0.5 * q_function(dz.j[1], dz.j[2], dz.j[3], dz.y[0], dz.y[1], dz.y[2]);
    }

    // propagate every slice through the block with the now-known curvature
    out.zs.assign(static_cast<size_t>(nb), frontier);
    std::vector<Mat> rmat_asc(static_cast<size_t>(nb));
    for (int i = 0; i < nb; ++i) rmat_asc[static_cast<size_t>(i)] = out.rmat[static_cast<size_t>(B - i)];
    const double r_lo = tg_.at(t_base);
    auto R_of = [&](double r) { return gridmath::interp_cubic(rmat_asc, r_lo, h_, r); };

    for (int it = 0; it < nt_; ++it) {
      const bool in_square = it >= t_base && it <= ib0;
      if (in_square) {
        for (int i = 0; i <= B; ++i)
          out.zs[static_cast<size_t>(i)][static_cast<size_t>(it)] = zb(cur, i, it - t_base);
        continue;
      }
      StateZ z = frontier[static_cast<size_t>(it)];
      for (int i = 0; i < B; ++i) {
        const double r = tg_.at(ib0 - i);
        step_state(z, out.rmat[static_cast<size_t>(i)], R_of(r - h_ / 2),
                   out.rmat[static_cast<size_t>(i + 1)], -h_);
        out.zs[static_cast<size_t>(i + 1)][static_cast<size_t>(it)] = z;
      }
    }
    return out;
  }

  const SphereDataGrid& grid_;
  const InitializedState& z0_;
  const CurvatureEstimate& est_;
  MarchOptions opts_;
  int m_ = 0, nt_ = 0, i_zero_ = 0;
  double h_ = 0.0;
  GridSpec tg_;
  std::vector<ConjugateDetector> detectors_;
};

}  // namespace

ReconstructionResult march_reconstruct(const SphereDataGrid& grid, const InitializedState& z0,
                                       const CurvatureEstimate& rmat_I0,
                                       const MarchOptions& opts) {
  return Marcher(grid, z0, rmat_I0, opts).run();
}

Mat ReconstructionResult::rmat_at(double r) const {
  if (r < t_grid.start - 1e-9 || r > t_grid.back() + 1e-9)
    throw DomainError("reconstruction queried outside [-T, epsilon]");
  return gridmath::interp_cubic(rmat, t_grid.start, t_grid.h,
                                std::clamp(r, t_grid.start, t_grid.back()));
}

ShapeAndK recover_shape_and_k(const ReconstructionResult& res, double r, double t) {
  const double h = res.t_grid.h;
  const double tu = (t - res.t_grid.start) / h;
  const int it = static_cast<int>(std::lround(tu));
  if (it < 0 || it >= res.t_grid.count || std::abs(tu - it) > 0.5 + 1e-9)
    throw DomainError("recover_shape_and_k: t outside the reconstructed lattice");

  Mat j, y;
  const double ru = (r - res.r_data_grid.start) / h;
  const int ir = static_cast<int>(std::lround(ru));
  if (ir >= 0 && ir < res.r_data_grid.count && std::abs(ru - ir) < 1e-9) {
    j = res.j_data[static_cast<size_t>(res.idx_data(ir, it))];
    y = res.y_data[static_cast<size_t>(res.idx_data(ir, it))];
  } else {
    if (r < res.t_grid.start - 1e-9 || r > res.t_grid.back() + 1e-9)
      throw DomainError("recover_shape_and_k: r outside the reconstructed span");
    // re-integrate the slice from r = 0 with the reconstructed curvature
    const StateZ& z0 = res.z_at_zero[static_cast<size_t>(it)];
    j = z0.j[0];
    y = z0.y[0];
    const double dir = r >= 0 ? 1.0 : -1.0;
    const int full = static_cast<int>(std::floor(std::abs(r) / h));
    double rc = 0.0;
    for (int sstep = 0; sstep < full; ++sstep) {
      rk4_jacobi(j, y, res.rmat_at(rc), res.rmat_at(rc + dir * h / 2), res.rmat_at(rc + dir * h),
                 dir * h);
      rc += dir * h;
    }
    if (std::abs(r - rc) > 1e-12)
      rk4_jacobi(j, y, res.rmat_at(rc), res.rmat_at((rc + r) / 2), res.rmat_at(r), r - rc);
  }

  ShapeAndK out;
  if (jacobi_invertible(j)) out.s = Mat(y * j.inverse());
  if (jacobi_invertible(y)) out.k = Mat(j * y.inverse());
  return out;
}

std::vector<ConjugatePair> detect_conjugates(const ReconstructionResult& res) {
  return res.conjugates;
}

ReconstructionResult invert_sphere_data(const SphereDataGrid& grid, const MarchOptions& opts,
                                        const InitOptions& iopts) {
  grid.set_strict(opts.strict_data);
  grid.reset_audit();
  const CurvatureEstimate est = estimate_curvature_on_I0(grid);
  const InitializedState z0 = initialize_jacobi_at_zero(grid, est, iopts);
  return march_reconstruct(grid, z0, est, opts);
}

}  // namespace findix
