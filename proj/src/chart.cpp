#include "findix/chart.hpp"

#include <Eigen/Eigenvalues>
#include <sstream>

#include "findix/numdiff.hpp"

namespace findix {

// ---------------------------------------------------------------------------
// Polynomial

Polynomial Polynomial::parse(const std::string& text, int dim) {
  std::vector<Term> terms;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) {
    const auto colon = tok.find(':');
    if (colon == std::string::npos)
      throw ConfigError("polynomial term '" + tok + "' lacks ':' separator");
    Term t;
    try {
      t.coeff = std::stod(tok.substr(0, colon));
    } catch (const std::exception&) {
      throw ConfigError("bad coefficient in polynomial term '" + tok + "'");
    }
    std::istringstream exps(tok.substr(colon + 1));
    std::string e;
    int i = 0;
    while (std::getline(exps, e, ',')) {
      if (i >= dim) throw ConfigError("too many exponents in polynomial term '" + tok + "'");
      try {
        t.exps[static_cast<size_t>(i++)] = std::stoi(e);
      } catch (const std::exception&) {
        throw ConfigError("bad exponent in polynomial term '" + tok + "'");
      }
    }
    if (i != dim)
      throw ConfigError("polynomial term '" + tok + "' has " + std::to_string(i) +
                        " exponents, expected " + std::to_string(dim));
    terms.push_back(t);
  }
  return Polynomial(std::move(terms));
}

std::string Polynomial::to_string(int dim) const {
  std::ostringstream out;
  bool first = true;
  for (const auto& t : terms_) {
    if (!first) out << ' ';
    first = false;
    out << t.coeff << ':';
    for (int i = 0; i < dim; ++i) out << (i ? "," : "") << t.exps[static_cast<size_t>(i)];
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Base chart: validation and the numeric differentiation fallback

ManifoldChart::ManifoldChart(std::string id, int dim, ChartKind kind, bool reversible, Box domain,
                             std::shared_ptr<const FinslerKernel> kernel)
    : id_(std::move(id)),
      dim_(dim),
      kind_(kind),
      reversible_(reversible),
      domain_(std::move(domain)),
      kernel_(std::move(kernel)) {
  if (dim_ < 2) throw ConfigError("chart dimension must be >= 2");
}

void ManifoldChart::require_valid(const Vec& x, const Vec& v) const {
  if (x.size() != dim_ || v.size() != dim_)
    throw DomainError(id_ + ": argument dimension mismatch");
  if (v.norm() == 0.0) throw DomainError(id_ + ": zero tangent vector");
  if (!contains(x)) throw DomainError(id_ + ": point outside chart domain");
}

Vec ManifoldChart::unit_vector(const Vec& x, const Vec& v) const {
  require_valid(x, v);
  const double F = finsler(x, v);
  if (!(F > 0.0) || !std::isfinite(F))
    throw DomainError(id_ + ": cannot normalize, F(x,v) = " + std::to_string(F));
  return v / F;
}

Mat ManifoldChart::fundamental_tensor(const Vec& x, const Vec& v) const {
  require_valid(x, v);
  Mat g = fundamental_tensor_impl(x, v);
  g = 0.5 * (g + g.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Mat> es(g);
  if (es.eigenvalues().minCoeff() <= 0.0) {
    std::ostringstream msg;
    msg << id_ << ": fundamental tensor not positive definite, eigenvalues:";
    for (int i = 0; i < es.eigenvalues().size(); ++i) msg << ' ' << es.eigenvalues()[i];
    throw ModelError(msg.str());
  }
  return g;
}

SprayOutput ManifoldChart::geodesic_spray(const Vec& x, const Vec& v) const {
  require_valid(x, v);
  return spray_impl(x, v);
}

CurvatureOutput ManifoldChart::curvature_operator(const Vec& x, const Vec& v) const {
  const Vec vu = unit_vector(x, v);
  return curvature_impl(x, vu);
}

double ManifoldChart::finsler_impl(const Vec& x, const Vec& v) const {
  if (!kernel_) throw ModelError(id_ + ": no Finsler kernel and no analytic override");
  return kernel_->value(x, v);
}

namespace {

hd::HDVec hd_const(const Vec& x) {
  hd::HDVec o(static_cast<int>(x.size()));
  for (int i = 0; i < x.size(); ++i) o[i] = hd::HD(x[i]);
  return o;
}

// Half the vertical Hessian of F^2, exact via hyper-duals.
Mat hd_fundamental(const FinslerKernel& K, const Vec& x, const Vec& v) {
  const int n = static_cast<int>(x.size());
  Mat g(n, n);
  const hd::HDVec xh = hd_const(x);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      hd::HDVec vh = hd_const(v);
      vh[i].d1 += 1.0;
      vh[j].d2 += 1.0;
      const hd::HD F = K.value(xh, vh);
      const hd::HD F2 = F * F;
      g(i, j) = g(j, i) = 0.5 * F2.d12;
    }
  return g;
}

// Spray coefficients G^i = 1/4 g^{il} (d2F2/dx^k dv^l v^k - dF2/dx^l).
Vec hd_spray_G(const FinslerKernel& K, const Vec& x, const Vec& v) {
  const int n = static_cast<int>(x.size());
  Mat g = hd_fundamental(K, x, v);
  Vec rhs = Vec::Zero(n);
  Vec dF2_dx(n);
  for (int k = 0; k < n; ++k) {
    hd::HDVec xh = hd_const(x);
    xh[k].d1 = 1.0;
    for (int l = 0; l < n; ++l) {
      hd::HDVec vh = hd_const(v);
      vh[l].d2 = 1.0;
      const hd::HD F = K.value(xh, vh);
      const hd::HD F2 = F * F;
      rhs[l] += F2.d12 * v[k];
      if (l == 0) dF2_dx[k] = F2.d1;
    }
  }
  rhs -= dF2_dx;
  Eigen::LLT<Mat> llt(g);
  if (llt.info() != Eigen::Success)
    throw ModelError("geodesic spray: singular fundamental tensor");
  return 0.25 * llt.solve(rhs).eval();
}

}  // namespace

Mat ManifoldChart::fundamental_tensor_impl(const Vec& x, const Vec& v) const {
  if (!kernel_) throw ModelError(id_ + ": no Finsler kernel and no analytic override");
  return hd_fundamental(*kernel_, x, v);
}

SprayOutput ManifoldChart::spray_impl(const Vec& x, const Vec& v) const {
  if (!kernel_) throw ModelError(id_ + ": no Finsler kernel and no analytic override");
  SprayOutput out;
  out.G = hd_spray_G(*kernel_, x, v);
  const int n = dim_;
  const double h = numdiff::base_step(x, v);
  out.N.resize(n, n);
  for (int j = 0; j < n; ++j) {
    Vec col = numdiff::deriv1(
        [&](double s) {
          Vec vv = v;
          vv[j] += s;
          return hd_spray_G(*kernel_, x, vv);
        },
        h);
    out.N.col(j) = col;
  }
  return out;
}

CurvatureOutput ManifoldChart::curvature_impl(const Vec& x, const Vec& v) const {
  if (!kernel_) throw ModelError(id_ + ": no Finsler kernel and no analytic override");
  const FinslerKernel& K = *kernel_;
  const int n = dim_;
  const double h = numdiff::base_step(x, v);

  auto G_at = [&](const Vec& xx, const Vec& vv) { return hd_spray_G(K, xx, vv); };
  const Vec G0 = G_at(x, v);

  Mat Gx(n, n);  // dG^i/dx^k
  for (int k = 0; k < n; ++k) {
    Vec col = numdiff::deriv1(
        [&](double s) {
          Vec xx = x;
          xx[k] += s;
          return G_at(xx, v);
        },
        h);
    Gx.col(k) = col;
  }

  Mat N(n, n);  // dG^i/dv^j
  for (int j = 0; j < n; ++j) {
    Vec col = numdiff::deriv1(
        [&](double s) {
          Vec vv = v;
          vv[j] += s;
          return G_at(x, vv);
        },
        h);
    N.col(j) = col;
  }

  Mat R = 2.0 * Gx;
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k) {
      // d2 G / dx^j dv^k
      Vec gxv = numdiff::deriv11(
          [&](double a, double b) {
            Vec xx = x, vv = v;
            xx[j] += a;
            vv[k] += b;
            return G_at(xx, vv);
          },
          h, h);
      R.col(k) -= v[j] * gxv;
      // d2 G / dv^j dv^k
      Vec gvv;
      if (j == k) {
        gvv = numdiff::deriv2(
            [&](double s) {
              Vec vv = v;
              vv[j] += s;
              return G_at(x, vv);
            },
            h);
      } else {
        gvv = numdiff::deriv11(
            [&](double a, double b) {
              Vec vv = v;
              vv[j] += a;
              vv[k] += b;
              return G_at(x, vv);
            },
            h, h);
      }
      R.col(k) += 2.0 * G0[j] * gvv;
    }
  R -= (N * N).eval();

  CurvatureOutput out;
  out.R_full = R;
  const double scale = std::max(1.0, R.cwiseAbs().maxCoeff());
  out.accuracy_warning = ((R * v).norm() > 2e-7 * scale) || !R.allFinite();
  return out;
}

// ---------------------------------------------------------------------------
// Analytic catalog charts

namespace {

class EuclideanChart final : public ManifoldChart {
 public:
  explicit EuclideanChart(int n)
      : ManifoldChart("euclidean-" + std::to_string(n), n, ChartKind::analytic, true,
                      Box::cube(n, 100.0)) {}

 protected:
  double finsler_impl(const Vec&, const Vec& v) const override { return v.norm(); }
  Mat fundamental_tensor_impl(const Vec&, const Vec&) const override {
    return Mat::Identity(dim(), dim());
  }
  SprayOutput spray_impl(const Vec&, const Vec&) const override {
    return {Vec::Zero(dim()), Mat::Zero(dim(), dim())};
  }
  CurvatureOutput curvature_impl(const Vec&, const Vec&) const override {
    return {Mat::Zero(dim(), dim()), false};
  }
};

// Conformally flat metric lambda(x)|v| with constant sectional curvature.
class ConformalChart : public ManifoldChart {
 public:
  ConformalChart(std::string id, int n, double curvature, Box domain)
      : ManifoldChart(std::move(id), n, ChartKind::analytic, true, std::move(domain)),
        curv_(curvature) {}

 protected:
  virtual double lambda(const Vec& x) const = 0;
  virtual Vec grad_log_lambda(const Vec& x) const = 0;

  double finsler_impl(const Vec& x, const Vec& v) const override { return lambda(x) * v.norm(); }

  Mat fundamental_tensor_impl(const Vec& x, const Vec&) const override {
    const double l = lambda(x);
    return l * l * Mat::Identity(dim(), dim());
  }

  SprayOutput spray_impl(const Vec& x, const Vec& v) const override {
    const Vec phi = grad_log_lambda(x);
    const double pv = phi.dot(v);
    SprayOutput out;
    out.G = pv * v - 0.5 * v.squaredNorm() * phi;
    out.N = v * phi.transpose() + pv * Mat::Identity(dim(), dim()) - phi * v.transpose();
    return out;
  }

  CurvatureOutput curvature_impl(const Vec& x, const Vec& vu) const override {
    const double l2 = lambda(x) * lambda(x);
    Mat R = curv_ * (Mat::Identity(dim(), dim()) - l2 * (vu * vu.transpose()));
    return {R, false};
  }

 private:
  double curv_;
};

class SphereChart final : public ConformalChart {
 public:
  explicit SphereChart(int n)
      : ConformalChart("sphere-" + std::to_string(n), n, 1.0, Box::cube(n, 100.0)) {}

 protected:
  double lambda(const Vec& x) const override { return 2.0 / (1.0 + x.squaredNorm()); }
  Vec grad_log_lambda(const Vec& x) const override { return -2.0 * x / (1.0 + x.squaredNorm()); }
};

class HyperbolicChart final : public ConformalChart {
 public:
  explicit HyperbolicChart(int n)
      : ConformalChart("hyperbolic-" + std::to_string(n), n, -1.0, Box::cube(n, 0.995)) {}

  bool contains(const Vec& x) const override {
    return chart_domain().contains(x) && x.norm() <= 0.995;
  }

 protected:
  double lambda(const Vec& x) const override {
    const double r2 = x.squaredNorm();
    if (r2 >= 1.0) throw DomainError("hyperbolic chart: point outside the unit ball");
    return 2.0 / (1.0 - r2);
  }
  Vec grad_log_lambda(const Vec& x) const override { return 2.0 * x / (1.0 - x.squaredNorm()); }
};

// Minkowski Randers norm |v| + b.v: flat and non-reversible.
class RandersFlatChart final : public ManifoldChart {
 public:
  RandersFlatChart(int n, Vec b)
      : ManifoldChart("randers-flat-" + std::to_string(n), n, ChartKind::analytic, false,
                      Box::cube(n, 100.0)),
        b_(std::move(b)) {
    if (b_.norm() >= 1.0) throw ConfigError("randers drift must satisfy |b| < 1");
  }

 protected:
  double finsler_impl(const Vec&, const Vec& v) const override { return v.norm() + b_.dot(v); }

  Mat fundamental_tensor_impl(const Vec&, const Vec& v) const override {
    const double a = v.norm();
    const Vec vhat = v / a;
    const Vec ell = vhat + b_;
    const double F = a + b_.dot(v);
    return ell * ell.transpose() +
           (F / a) * (Mat::Identity(dim(), dim()) - vhat * vhat.transpose());
  }

  SprayOutput spray_impl(const Vec&, const Vec&) const override {
    return {Vec::Zero(dim()), Mat::Zero(dim(), dim())};
  }
  CurvatureOutput curvature_impl(const Vec&, const Vec&) const override {
    return {Mat::Zero(dim(), dim()), false};
  }

 private:
  Vec b_;
};

// Generic numeric chart: everything comes from the kernel.
class KernelChart final : public ManifoldChart {
 public:
  KernelChart(std::string id, int n, bool reversible, Box domain,
              std::shared_ptr<const FinslerKernel> kernel)
      : ManifoldChart(std::move(id), n, ChartKind::numeric, reversible, std::move(domain),
                      std::move(kernel)) {}
};

template <class VT>
auto generic_norm(const VT& v) {
  using std::sqrt;
  using hd::sqrt;
  auto s = v[0] * v[0];
  for (int i = 1; i < v.size(); ++i) s = s + v[i] * v[i];
  return sqrt(s);
}

std::shared_ptr<const FinslerKernel> randers_kernel(RandersFieldSpec spec) {
  return make_kernel([spec = std::move(spec)](const auto& x, const auto& v) {
    using S = std::decay_t<decltype(x[0])>;
    S conf = S(1.0) + S(spec.epsilon) * spec.w(x);
    S drift{};
    for (int i = 0; i < v.size(); ++i) drift = drift + spec.b[static_cast<size_t>(i)](x) * v[i];
    return generic_norm(v) * conf + drift;
  });
}

RandersFieldSpec default_randers_spec(int n) {
  RandersFieldSpec spec;
  spec.epsilon = 0.05;
  if (n == 2) {
    spec.w = Polynomial::parse("0.5:2,0 -0.3:1,1", 2);
    spec.b = {Polynomial::parse("0.3:0,0 0.05:0,1", 2), Polynomial::parse("-0.1:1,0", 2)};
  } else {
    spec.w = Polynomial::parse("0.5:2,0,0 -0.3:1,1,0 0.2:0,0,2", 3);
    spec.b = {Polynomial::parse("0.3:0,0,0 0.05:0,1,0", 3), Polynomial::parse("-0.1:1,0,0", 3),
              Polynomial::parse("0.05:0,0,1", 3)};
  }
  return spec;
}

}  // namespace

ChartPtr make_randers_perturbed(std::string id, int dim, RandersFieldSpec spec) {
  if (static_cast<int>(spec.b.size()) != dim)
    throw ConfigError("randers chart needs one b-polynomial per dimension");
  auto kernel = randers_kernel(std::move(spec));
  return std::make_shared<KernelChart>(std::move(id), dim, false, Box::cube(dim, 8.0),
                                       std::move(kernel));
}

ChartPtr make_numeric_chart(std::string id, int dim, bool reversible, Box domain,
                            std::shared_ptr<const FinslerKernel> kernel) {
  return std::make_shared<KernelChart>(std::move(id), dim, reversible, std::move(domain),
                                       std::move(kernel));
}

ChartPtr make_chart(const std::string& id) {
  const auto dash = id.rfind('-');
  int n = 0;
  if (dash != std::string::npos) {
    try {
      n = std::stoi(id.substr(dash + 1));
    } catch (const std::exception&) {
      n = 0;
    }
  }
  const std::string family = dash == std::string::npos ? id : id.substr(0, dash);
  if (n < 2 || n > 3) throw ConfigError("unknown chart id '" + id + "'");

  if (family == "euclidean") return std::make_shared<EuclideanChart>(n);
  if (family == "sphere") return std::make_shared<SphereChart>(n);
  if (family == "hyperbolic") return std::make_shared<HyperbolicChart>(n);
  if (family == "randers-flat") {
    Vec b = Vec::Zero(n);
    b[0] = 0.3;
    return std::make_shared<RandersFlatChart>(n, b);
  }
  if (family == "randers-perturbed")
    return make_randers_perturbed(id, n, default_randers_spec(n));
  throw ConfigError("unknown chart id '" + id + "'");
}

std::vector<std::string> catalog_chart_ids() {
  return {"euclidean-2",  "sphere-2",  "hyperbolic-2",  "randers-flat-2",  "randers-perturbed-2",
          "euclidean-3",  "sphere-3",  "hyperbolic-3",  "randers-flat-3",  "randers-perturbed-3"};
}

}  // namespace findix
