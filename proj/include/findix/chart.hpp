#ifndef FINDIX_CHART_HPP
#define FINDIX_CHART_HPP

#include <array>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "findix/hyperdual.hpp"
#include "findix/types.hpp"

namespace findix {

enum class ChartKind { analytic, numeric };

struct SprayOutput {
  Vec G;  // geodesic coefficients G^i(x, v)
  Mat N;  // nonlinear connection N^i_j = dG^i / dv^j
};

struct CurvatureOutput {
  Mat R_full;                     // (R_v)^i_k on chart components, v rescaled to F = 1
  bool accuracy_warning = false;  // set when numeric differentiation loses the R_v v = 0 identity
};

// Finsler function evaluable both on plain doubles and on hyper-duals, so
// vertical derivatives come out exact while spatial structure stays generic.
class FinslerKernel {
 public:
  virtual ~FinslerKernel() = default;
  virtual double value(const Vec& x, const Vec& v) const = 0;
  virtual hd::HD value(const hd::HDVec& x, const hd::HDVec& v) const = 0;
};

template <class F>
class GenericKernel final : public FinslerKernel {
 public:
  explicit GenericKernel(F f) : f_(std::move(f)) {}
  double value(const Vec& x, const Vec& v) const override { return f_(x, v); }
  hd::HD value(const hd::HDVec& x, const hd::HDVec& v) const override { return f_(x, v); }

 private:
  F f_;
};

template <class F>
std::shared_ptr<const FinslerKernel> make_kernel(F f) {
  return std::make_shared<GenericKernel<F>>(std::move(f));
}

// Multivariate polynomial with integer exponents, used for configurable
// Randers perturbation fields.
class Polynomial {
 public:
  struct Term {
    double coeff = 0.0;
    std::array<int, kMaxDim> exps{};
  };

  Polynomial() = default;
  explicit Polynomial(std::vector<Term> terms) : terms_(std::move(terms)) {}

  // Text form: whitespace-separated terms "coeff:e1,e2[,e3...]".
  static Polynomial parse(const std::string& text, int dim);
  std::string to_string(int dim) const;
  bool empty() const { return terms_.empty(); }

  template <class VT>
  auto operator()(const VT& x) const {
    using S = std::decay_t<decltype(x[0])>;
    S acc{};
    for (const auto& t : terms_) {
      S term = S(t.coeff);
      for (int i = 0; i < x.size(); ++i)
        for (int e = 0; e < t.exps[static_cast<size_t>(i)]; ++e) term = term * x[i];
      acc = acc + term;
    }
    return acc;
  }

 private:
  std::vector<Term> terms_;
};

class ManifoldChart {
 public:
  virtual ~ManifoldChart() = default;

  int dim() const { return dim_; }
  const std::string& id() const { return id_; }
  ChartKind kind() const { return kind_; }
  bool reversible() const { return reversible_; }
  const Box& chart_domain() const { return domain_; }
  virtual bool contains(const Vec& x) const { return domain_.contains(x); }

  double finsler(const Vec& x, const Vec& v) const { return finsler_impl(x, v); }

  // g(x, v) = half the vertical Hessian of F^2; checked SPD.
  Mat fundamental_tensor(const Vec& x, const Vec& v) const;

  SprayOutput geodesic_spray(const Vec& x, const Vec& v) const;

  // Directional curvature operator; v is rescaled to F(x, v) = 1 first.
  CurvatureOutput curvature_operator(const Vec& x, const Vec& v) const;

  // v / F(x, v).
  Vec unit_vector(const Vec& x, const Vec& v) const;

 protected:
  ManifoldChart(std::string id, int dim, ChartKind kind, bool reversible, Box domain,
                std::shared_ptr<const FinslerKernel> kernel = nullptr);

  virtual double finsler_impl(const Vec& x, const Vec& v) const;
  virtual Mat fundamental_tensor_impl(const Vec& x, const Vec& v) const;
  virtual SprayOutput spray_impl(const Vec& x, const Vec& v) const;
  virtual CurvatureOutput curvature_impl(const Vec& x, const Vec& v) const;

  const FinslerKernel* kernel() const { return kernel_.get(); }
  void require_valid(const Vec& x, const Vec& v) const;

 private:
  std::string id_;
  int dim_;
  ChartKind kind_;
  bool reversible_;
  Box domain_;
  std::shared_ptr<const FinslerKernel> kernel_;
};

using ChartPtr = std::shared_ptr<const ManifoldChart>;

struct RandersFieldSpec {
  double epsilon = 0.05;          // size of the conformal perturbation
  Polynomial w;                   // conformal field w(x)
  std::vector<Polynomial> b;      // drift one-form components b_i(x)
};

// Built-in catalog: euclidean-{2,3}, sphere-{2,3} (stereographic),
// hyperbolic-{2,3} (Poincare ball), randers-flat-{2,3},
// randers-perturbed-{2,3}.
ChartPtr make_chart(const std::string& id);
std::vector<std::string> catalog_chart_ids();

ChartPtr make_randers_perturbed(std::string id, int dim, RandersFieldSpec spec);

// Numeric wrapper around an arbitrary kernel (used to cross-check the
// numeric differentiation path against analytic charts).
ChartPtr make_numeric_chart(std::string id, int dim, bool reversible, Box domain,
                            std::shared_ptr<const FinslerKernel> kernel);

}  // namespace findix

#endif  // FINDIX_CHART_HPP
