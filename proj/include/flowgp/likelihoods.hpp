#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Sparse>

#include "flowgp/core.hpp"

namespace flowgp {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Triplet = Eigen::Triplet<double>;

// ---------------------------------------------------------------------------
// Standard normal helpers, stable in the far tails.

inline double log_normal_pdf(double z) { return -0.5 * z * z - 0.5 * std::log(2.0 * std::numbers::pi); }

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// log Phi(z). erfc is accurate down to z = -30; below that the asymptotic
/// series Phi(z) ~ phi(z)/(-z) (1 - 1/z^2 + 3/z^4 - 15/z^6) is used.
inline double log_normal_cdf(double z) {
  if (std::isnan(z)) return z;
  if (z > 0.0) return std::log1p(-0.5 * std::erfc(z / std::numbers::sqrt2));
  if (z >= -30.0) return std::log(0.5 * std::erfc(-z / std::numbers::sqrt2));
  const double r = 1.0 / (z * z);
  return log_normal_pdf(z) - std::log(-z) + std::log1p(r * (-1.0 + r * (3.0 - 15.0 * r)));
}

/// phi(z) / Phi(z), the derivative of log Phi.
inline double normal_hazard(double z) {
  if (z >= -30.0) return std::exp(log_normal_pdf(z) - log_normal_cdf(z));
  const double r = 1.0 / (z * z);
  return -z / (1.0 + r * (-1.0 + r * (3.0 - 15.0 * r)));
}

/// log Phi(z) and phi(z)/Phi(z) from one erfc evaluation. Above z = 40 Phi
/// rounds to 1 and phi underflows, so both are returned exactly as 0.
inline void log_normal_cdf_and_hazard(double z, double& log_cdf, double& hazard) {
  if (z > 40.0) {
    log_cdf = 0.0;
    hazard = 0.0;
    return;
  }
  if (std::isnan(z) || z < -30.0) {
    log_cdf = log_normal_cdf(z);
    hazard = normal_hazard(z);
    return;
  }
  const double tail = 0.5 * std::erfc(-z / std::numbers::sqrt2);  // Phi(z)
  log_cdf = z > 0.0 ? std::log1p(-0.5 * std::erfc(z / std::numbers::sqrt2)) : std::log(tail);
  hazard = std::exp(log_normal_pdf(z)) / tail;
}

/// log(Phi(a) - Phi(b)) for a > b, without cancellation in either tail.
inline double log_normal_cdf_diff(double a, double b) {
  if (!(a > b)) return -std::numeric_limits<double>::infinity();
  if (b > 0.0) {  // reflect so both arguments sit in the lower tail
    const double hi = -b;
    const double lo = -a;
    a = hi;
    b = lo;
  }
  if (a <= 0.0) {
    const double la = log_normal_cdf(a);
    const double lb = log_normal_cdf(b);
    return la + std::log1p(-std::exp(lb - la));
  }
  // b <= 0 < a: the interval holds the mode, no cancellation
  return std::log(1.0 - normal_cdf(-a) - normal_cdf(b));
}

// ---------------------------------------------------------------------------

/// Conditioning term p(C | f0). States are passed as column batches (m x n).
class Likelihood {
 public:
  virtual ~Likelihood() = default;

  /// Number of field values expected per state.
  virtual Index dim() const = 0;
  virtual bool has_score() const { return true; }
  virtual std::string name() const = 0;

  /// log p(C | f) per column; scores (m x n) filled when non-null.
  virtual void evaluate(const Matrix& f, Vector& logp, Matrix* scores) const = 0;

  Vector log_density(const Matrix& f) const {
    Vector lp;
    evaluate(f, lp, nullptr);
    return lp;
  }

  std::pair<double, Vector> at(const Vector& f) const {
    Vector lp;
    Matrix s;
    evaluate(f, lp, &s);
    return {lp(0), s.col(0)};
  }

 protected:
  void check(const Matrix& f) const {
    if (f.rows() != dim())
      throw DimensionError(name() + ": state has " + std::to_string(f.rows()) + " rows, expected " +
                           std::to_string(dim()));
  }
};

using LikelihoodPtr = std::shared_ptr<const Likelihood>;

/// Likelihood that does not depend on f.
class ConstantLikelihood final : public Likelihood {
 public:
  explicit ConstantLikelihood(Index m, double value = 0.0) : m_(m), value_(value) {}
  Index dim() const override { return m_; }
  std::string name() const override { return "constant"; }
  void evaluate(const Matrix& f, Vector& logp, Matrix* scores) const override {
    check(f);
    logp = Vector::Constant(f.cols(), value_);
    if (scores) scores->setZero(f.rows(), f.cols());
  }

 private:
  Index m_;
  double value_;
};

// ---------------------------------------------------------------------------
// Inequality constraints through a probit relaxation.

/// Affine margin map c = G f + h with sparse G.
struct AffineMargins {
  SparseMatrix map;
  Vector offset;

  Index input_dim() const { return map.cols(); }
  Index output_dim() const { return map.rows(); }
  Matrix apply(const Matrix& f) const {
    Matrix c = map * f;
    c.colwise() += offset;
    return c;
  }
};

/// Forward differences (f[i+1] - f[i]) / dx on a uniform grid.
inline Vector monotone_margins(const Vector& f, double dx) {
  if (f.size() < 2) throw DimensionError("monotone_margins: need at least two grid values");
  if (!(dx > 0.0)) throw ConfigError("monotone_margins: dx must be positive");
  return (f.tail(f.size() - 1) - f.head(f.size() - 1)) / dx;
}

/// Margins (u - f, f - l), upper block first.
inline Vector bound_margins(const Vector& f, const Vector& lower, const Vector& upper) {
  if (lower.size() != f.size() || upper.size() != f.size()) throw DimensionError("bound_margins: size mismatch");
  Vector c(2 * f.size());
  c << upper - f, f - lower;
  return c;
}

inline AffineMargins monotone_margin_map(Index m, double dx) {
  if (m < 2) throw DimensionError("monotone margin map needs m >= 2");
  if (!(dx > 0.0)) throw ConfigError("monotone margin map: dx must be positive");
  std::vector<Triplet> t;
  t.reserve(static_cast<std::size_t>(2 * (m - 1)));
  for (Index i = 0; i + 1 < m; ++i) {
    t.emplace_back(static_cast<int>(i), static_cast<int>(i + 1), 1.0 / dx);
    t.emplace_back(static_cast<int>(i), static_cast<int>(i), -1.0 / dx);
  }
  AffineMargins a;
  a.map.resize(m - 1, m);
  a.map.setFromTriplets(t.begin(), t.end());
  a.offset = Vector::Zero(m - 1);
  return a;
}

inline AffineMargins bound_margin_map(const Vector& lower, const Vector& upper) {
  const Index m = lower.size();
  if (upper.size() != m) throw DimensionError("bound margin map: size mismatch");
  std::vector<Triplet> t;
  t.reserve(static_cast<std::size_t>(2 * m));
  for (Index i = 0; i < m; ++i) {
    t.emplace_back(static_cast<int>(i), static_cast<int>(i), -1.0);
    t.emplace_back(static_cast<int>(m + i), static_cast<int>(i), 1.0);
  }
  AffineMargins a;
  a.map.resize(2 * m, m);
  a.map.setFromTriplets(t.begin(), t.end());
  a.offset.resize(2 * m);
  a.offset << upper, -lower;
  return a;
}

/// sum_i log Phi(c_i / nu) over affine margins c = G f + h.
class ProbitInequality final : public Likelihood {
 public:
  ProbitInequality(AffineMargins margins, double bandwidth, std::string label = "probit")
      : margins_(std::move(margins)), nu_(bandwidth), label_(std::move(label)) {
    if (!(nu_ > 0.0)) throw ConfigError("probit bandwidth must be positive");
    if (margins_.offset.size() != margins_.output_dim()) throw DimensionError("probit: offset size");
  }

  static std::shared_ptr<ProbitInequality> monotone(Index m, double dx, double bandwidth) {
    return std::make_shared<ProbitInequality>(monotone_margin_map(m, dx), bandwidth, "monotone");
  }
  static std::shared_ptr<ProbitInequality> bounds(const Vector& lower, const Vector& upper, double bandwidth) {
    return std::make_shared<ProbitInequality>(bound_margin_map(lower, upper), bandwidth, "bounds");
  }

  Index dim() const override { return margins_.input_dim(); }
  std::string name() const override { return label_; }
  double bandwidth() const { return nu_; }
  const AffineMargins& margins() const { return margins_; }

  void evaluate(const Matrix& f, Vector& logp, Matrix* scores) const override {
    check(f);
    const Matrix z = margins_.apply(f) / nu_;
    logp.resize(f.cols());
    Matrix dz(z.rows(), z.cols());
    for (Index j = 0; j < z.cols(); ++j) {
      double s = 0.0;
      for (Index i = 0; i < z.rows(); ++i) {
        double lc, h;
        log_normal_cdf_and_hazard(z(i, j), lc, h);
        s += lc;
        if (scores) dz(i, j) = h / nu_;
      }
      logp(j) = s;
    }
    if (scores) *scores = margins_.map.transpose() * dz;
  }

 private:
  AffineMargins margins_;
  double nu_;
  std::string label_;
};

// ---------------------------------------------------------------------------
// Residual operators for equality constraints.

/// Values on an H x W grid stored row-major at index i * W + j; i is the spatial
/// index (spacing dx), j the temporal index (spacing dt).
struct GridField2D {
  Index rows = 0;  ///< H
  Index cols = 0;  ///< W
  double dx = 1.0;
  double dt = 1.0;

  /// Spacings 2/(H-1) over x in [-1, 1] and 1/(W-1) over t in [0, 1].
  static GridField2D unit_domain(Index h, Index w) {
    if (h < 3 || w < 3) throw ConfigError("GridField2D needs H, W >= 3 for second-order stencils");
    return {h, w, 2.0 / static_cast<double>(h - 1), 1.0 / static_cast<double>(w - 1)};
  }

  Index size() const { return rows * cols; }
  Index index(Index i, Index j) const { return i * cols + j; }
  void validate() const {
    if (rows < 3 || cols < 3) throw ConfigError("GridField2D needs H, W >= 3 for second-order stencils");
    if (!(dx > 0.0) || !(dt > 0.0)) throw ConfigError("GridField2D spacings must be positive");
  }
};

/// Residual r(f) with an analytic, sparse Jacobian.
class ResidualOperator {
 public:
  virtual ~ResidualOperator() = default;
  virtual Index input_dim() const = 0;
  virtual Index output_dim() const = 0;
  virtual std::string name() const = 0;
  virtual Vector residual(const Vector& f) const = 0;
  /// J(f)^T g, applied stencil-wise.
  virtual Vector apply_jacobian_transpose(const Vector& f, const Vector& g) const = 0;
  virtual void jacobian_triplets(const Vector& f, std::vector<Triplet>& out) const = 0;

  SparseMatrix jacobian(const Vector& f) const {
    std::vector<Triplet> t;
    jacobian_triplets(f, t);
    SparseMatrix j(output_dim(), input_dim());
    j.setFromTriplets(t.begin(), t.end());
    return j;
  }

 protected:
  void check(const Vector& f) const {
    if (f.size() != input_dim())
      throw DimensionError(name() + ": field has " + std::to_string(f.size()) + " values, expected " +
                           std::to_string(input_dim()));
  }
};

using ResidualPtr = std::shared_ptr<const ResidualOperator>;

/// r = G f - target.
class LinearResidual final : public ResidualOperator {
 public:
  LinearResidual(SparseMatrix map, Vector target) : map_(std::move(map)), target_(std::move(target)) {
    if (target_.size() != map_.rows()) throw DimensionError("LinearResidual: target size");
  }
  static std::shared_ptr<LinearResidual> from_dense(const Matrix& g, Vector target) {
    return std::make_shared<LinearResidual>(g.sparseView(), std::move(target));
  }
  Index input_dim() const override { return map_.cols(); }
  Index output_dim() const override { return map_.rows(); }
  std::string name() const override { return "linear"; }
  Vector residual(const Vector& f) const override {
    check(f);
    return map_ * f - target_;
  }
  Vector apply_jacobian_transpose(const Vector& f, const Vector& g) const override {
    check(f);
    return map_.transpose() * g;
  }
  void jacobian_triplets(const Vector&, std::vector<Triplet>& out) const override {
    for (int k = 0; k < map_.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(map_, k); it; ++it) out.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
  }

 private:
  SparseMatrix map_;
  Vector target_;
};

/// Damped pendulum f'' + sin f + damping f' at interior nodes of a uniform time grid.
class PendulumResidual final : public ResidualOperator {
 public:
  PendulumResidual(Index m, double dt, double damping = 0.2) : m_(m), dt_(dt), damping_(damping) {
    if (m < 3) throw ConfigError("pendulum residual needs at least three time points");
    if (!(dt > 0.0)) throw ConfigError("pendulum residual: dt must be positive");
  }
  Index input_dim() const override { return m_; }
  Index output_dim() const override { return m_ - 2; }
  std::string name() const override { return "pendulum"; }

  Vector residual(const Vector& f) const override {
    check(f);
    Vector r(m_ - 2);
    for (Index k = 1; k + 1 < m_; ++k)
      r(k - 1) = (f(k + 1) - 2.0 * f(k) + f(k - 1)) / (dt_ * dt_) + std::sin(f(k)) +
                 damping_ * (f(k + 1) - f(k - 1)) / (2.0 * dt_);
    return r;
  }

  Vector apply_jacobian_transpose(const Vector& f, const Vector& g) const override {
    check(f);
    Vector out = Vector::Zero(m_);
    const double c2 = 1.0 / (dt_ * dt_);
    const double c1 = damping_ / (2.0 * dt_);
    for (Index k = 1; k + 1 < m_; ++k) {
      const double gk = g(k - 1);
      out(k - 1) += gk * (c2 - c1);
      out(k) += gk * (-2.0 * c2 + std::cos(f(k)));
      out(k + 1) += gk * (c2 + c1);
    }
    return out;
  }

  void jacobian_triplets(const Vector& f, std::vector<Triplet>& out) const override {
    check(f);
    const double c2 = 1.0 / (dt_ * dt_);
    const double c1 = damping_ / (2.0 * dt_);
    for (Index k = 1; k + 1 < m_; ++k) {
      const int row = static_cast<int>(k - 1);
      out.emplace_back(row, static_cast<int>(k - 1), c2 - c1);
      out.emplace_back(row, static_cast<int>(k), -2.0 * c2 + std::cos(f(k)));
      out.emplace_back(row, static_cast<int>(k + 1), c2 + c1);
    }
  }

 private:
  Index m_;
  double dt_;
  double damping_;
};

namespace detail {

// Shared interior-stencil machinery for 2D PDE residuals at i = 1..H-2, j = 1..W-2.
class InteriorStencil2D : public ResidualOperator {
 public:
  explicit InteriorStencil2D(GridField2D grid) : g_(grid) { g_.validate(); }
  Index input_dim() const override { return g_.size(); }
  Index output_dim() const override { return (g_.rows - 2) * (g_.cols - 2); }
  const GridField2D& grid() const { return g_; }

 protected:
  Index out_index(Index i, Index j) const { return (i - 1) * (g_.cols - 2) + (j - 1); }
  GridField2D g_;
};

}  // namespace detail

/// eps u_xx + 5u - 5u^3 - u_t at interior nodes.
class AllenCahnResidual final : public detail::InteriorStencil2D {
 public:
  AllenCahnResidual(GridField2D grid, double eps = 1e-5) : InteriorStencil2D(grid), eps_(eps) {}
  std::string name() const override { return "allen_cahn"; }

  Vector residual(const Vector& f) const override {
    check(f);
    Vector r(output_dim());
    const double cx = eps_ / (g_.dx * g_.dx);
    const double ct = 1.0 / (2.0 * g_.dt);
    for (Index i = 1; i + 1 < g_.rows; ++i)
      for (Index j = 1; j + 1 < g_.cols; ++j) {
        const double u = f(g_.index(i, j));
        r(out_index(i, j)) = cx * (f(g_.index(i + 1, j)) - 2.0 * u + f(g_.index(i - 1, j))) + 5.0 * u -
                             5.0 * u * u * u - ct * (f(g_.index(i, j + 1)) - f(g_.index(i, j - 1)));
      }
    return r;
  }

  Vector apply_jacobian_transpose(const Vector& f, const Vector& g) const override {
    check(f);
    Vector out = Vector::Zero(input_dim());
    const double cx = eps_ / (g_.dx * g_.dx);
    const double ct = 1.0 / (2.0 * g_.dt);
    for (Index i = 1; i + 1 < g_.rows; ++i)
      for (Index j = 1; j + 1 < g_.cols; ++j) {
        const double w = g(out_index(i, j));
        const double u = f(g_.index(i, j));
        out(g_.index(i + 1, j)) += w * cx;
        out(g_.index(i - 1, j)) += w * cx;
        out(g_.index(i, j)) += w * (-2.0 * cx + 5.0 - 15.0 * u * u);
        out(g_.index(i, j + 1)) -= w * ct;
        out(g_.index(i, j - 1)) += w * ct;
      }
    return out;
  }

  void jacobian_triplets(const Vector& f, std::vector<Triplet>& out) const override {
    check(f);
    const double cx = eps_ / (g_.dx * g_.dx);
    const double ct = 1.0 / (2.0 * g_.dt);
    for (Index i = 1; i + 1 < g_.rows; ++i)
      for (Index j = 1; j + 1 < g_.cols; ++j) {
        const int row = static_cast<int>(out_index(i, j));
        const double u = f(g_.index(i, j));
        out.emplace_back(row, static_cast<int>(g_.index(i + 1, j)), cx);
        out.emplace_back(row, static_cast<int>(g_.index(i - 1, j)), cx);
        out.emplace_back(row, static_cast<int>(g_.index(i, j)), -2.0 * cx + 5.0 - 15.0 * u * u);
        out.emplace_back(row, static_cast<int>(g_.index(i, j + 1)), -ct);
        out.emplace_back(row, static_cast<int>(g_.index(i, j - 1)), ct);
      }
  }

 private:
  double eps_;
};

/// u_t + u u_x - nu u_xx at interior nodes.
class BurgersResidual final : public detail::InteriorStencil2D {
 public:
  BurgersResidual(GridField2D grid, double nu = 0.02) : InteriorStencil2D(grid), nu_(nu) {}
  std::string name() const override { return "burgers"; }

  Vector residual(const Vector& f) const override {
    check(f);
    Vector r(output_dim());
    const double ct = 1.0 / (2.0 * g_.dt);
    const double c1 = 1.0 / (2.0 * g_.dx);
    const double c2 = nu_ / (g_.dx * g_.dx);
    for (Index i = 1; i + 1 < g_.rows; ++i)
      for (Index j = 1; j + 1 < g_.cols; ++j) {
        const double u = f(g_.index(i, j));
        const double up = f(g_.index(i + 1, j));
        const double um = f(g_.index(i - 1, j));
        r(out_index(i, j)) = ct * (f(g_.index(i, j + 1)) - f(g_.index(i, j - 1))) + u * c1 * (up - um) -
                             c2 * (up - 2.0 * u + um);
      }
    return r;
  }

  Vector apply_jacobian_transpose(const Vector& f, const Vector& g) const override {
    check(f);
    Vector out = Vector::Zero(input_dim());
    const double ct = 1.0 / (2.0 * g_.dt);
    const double c1 = 1.0 / (2.0 * g_.dx);
    const double c2 = nu_ / (g_.dx * g_.dx);
    for (Index i = 1; i + 1 < g_.rows; ++i)
      for (Index j = 1; j + 1 < g_.cols; ++j) {
        const double w = g(out_index(i, j));
        const double u = f(g_.index(i, j));
        const double up = f(g_.index(i + 1, j));
        const double um = f(g_.index(i - 1, j));
        out(g_.index(i, j + 1)) += w * ct;
        out(g_.index(i, j - 1)) -= w * ct;
        out(g_.index(i, j)) += w * (c1 * (up - um) + 2.0 * c2);
        out(g_.index(i + 1, j)) += w * (u * c1 - c2);
        out(g_.index(i - 1, j)) += w * (-u * c1 - c2);
      }
    return out;
  }

  void jacobian_triplets(const Vector& f, std::vector<Triplet>& out) const override {
    check(f);
    const double ct = 1.0 / (2.0 * g_.dt);
    const double c1 = 1.0 / (2.0 * g_.dx);
    const double c2 = nu_ / (g_.dx * g_.dx);
    for (Index i = 1; i + 1 < g_.rows; ++i)
      for (Index j = 1; j + 1 < g_.cols; ++j) {
        const int row = static_cast<int>(out_index(i, j));
        const double u = f(g_.index(i, j));
        const double up = f(g_.index(i + 1, j));
        const double um = f(g_.index(i - 1, j));
        out.emplace_back(row, static_cast<int>(g_.index(i, j + 1)), ct);
        out.emplace_back(row, static_cast<int>(g_.index(i, j - 1)), -ct);
        out.emplace_back(row, static_cast<int>(g_.index(i, j)), c1 * (up - um) + 2.0 * c2);
        out.emplace_back(row, static_cast<int>(g_.index(i + 1, j)), u * c1 - c2);
        out.emplace_back(row, static_cast<int>(g_.index(i - 1, j)), -u * c1 - c2);
      }
  }

 private:
  double nu_;
};

enum class BoundaryKind { DirichletZero, SymmetricPeriodic };

/// Spatial boundary residuals for every time column j.
///   DirichletZero:      f(0, j) and f(H-1, j)
///   SymmetricPeriodic:  f(0, j) - f(H-1, j) and one-sided derivative mismatch
///                       [(f(1, j) - f(0, j)) - (f(H-1, j) - f(H-2, j))] / dx
/// Output layout: the first W entries belong to the first condition.
class BoundaryResidual final : public ResidualOperator {
 public:
  BoundaryResidual(GridField2D grid, BoundaryKind kind) : g_(grid), kind_(kind) { g_.validate(); }
  Index input_dim() const override { return g_.size(); }
  Index output_dim() const override { return 2 * g_.cols; }
  std::string name() const override {
    return kind_ == BoundaryKind::DirichletZero ? "boundary_dirichlet" : "boundary_periodic";
  }

  Vector residual(const Vector& f) const override {
    check(f);
    const Index w = g_.cols;
    const Index h = g_.rows;
    Vector r(2 * w);
    for (Index j = 0; j < w; ++j) {
      if (kind_ == BoundaryKind::DirichletZero) {
        r(j) = f(g_.index(0, j));
        r(w + j) = f(g_.index(h - 1, j));
      } else {
        r(j) = f(g_.index(0, j)) - f(g_.index(h - 1, j));
        r(w + j) = ((f(g_.index(1, j)) - f(g_.index(0, j))) - (f(g_.index(h - 1, j)) - f(g_.index(h - 2, j)))) / g_.dx;
      }
    }
    return r;
  }

  Vector apply_jacobian_transpose(const Vector& f, const Vector& g) const override {
    check(f);
    Vector out = Vector::Zero(input_dim());
    const Index w = g_.cols;
    const Index h = g_.rows;
    for (Index j = 0; j < w; ++j) {
      const double a = g(j);
      const double b = g(w + j);
      if (kind_ == BoundaryKind::DirichletZero) {
        out(g_.index(0, j)) += a;
        out(g_.index(h - 1, j)) += b;
      } else {
        out(g_.index(0, j)) += a - b / g_.dx;
        out(g_.index(h - 1, j)) += -a - b / g_.dx;
        out(g_.index(1, j)) += b / g_.dx;
        out(g_.index(h - 2, j)) += b / g_.dx;
      }
    }
    return out;
  }

  void jacobian_triplets(const Vector&, std::vector<Triplet>& out) const override {
    const Index w = g_.cols;
    const Index h = g_.rows;
    for (Index j = 0; j < w; ++j) {
      const int r0 = static_cast<int>(j);
      const int r1 = static_cast<int>(w + j);
      if (kind_ == BoundaryKind::DirichletZero) {
        out.emplace_back(r0, static_cast<int>(g_.index(0, j)), 1.0);
        out.emplace_back(r1, static_cast<int>(g_.index(h - 1, j)), 1.0);
      } else {
        const double c = 1.0 / g_.dx;
        out.emplace_back(r0, static_cast<int>(g_.index(0, j)), 1.0);
        out.emplace_back(r0, static_cast<int>(g_.index(h - 1, j)), -1.0);
        out.emplace_back(r1, static_cast<int>(g_.index(1, j)), c);
        out.emplace_back(r1, static_cast<int>(g_.index(0, j)), -c);
        out.emplace_back(r1, static_cast<int>(g_.index(h - 1, j)), -c);
        out.emplace_back(r1, static_cast<int>(g_.index(h - 2, j)), c);
      }
    }
  }

 private:
  GridField2D g_;
  BoundaryKind kind_;
};

/// -1/2 ||r(f) / sigma||^2 with score -J^T r / sigma^2. The normalising constant is dropped.
class GaussianResidual final : public Likelihood {
 public:
  GaussianResidual(ResidualPtr op, double sigma) : op_(std::move(op)), sigma_(sigma) {
    if (!op_) throw ConfigError("GaussianResidual: missing residual operator");
    if (!(sigma_ > 0.0)) throw ConfigError("GaussianResidual: sigma must be positive");
  }
  Index dim() const override { return op_->input_dim(); }
  std::string name() const override { return "gaussian_" + op_->name(); }
  double sigma() const { return sigma_; }
  const ResidualOperator& op() const { return *op_; }

  void evaluate(const Matrix& f, Vector& logp, Matrix* scores) const override {
    check(f);
    logp.resize(f.cols());
    if (scores) scores->resize(f.rows(), f.cols());
    const double inv_var = 1.0 / (sigma_ * sigma_);
    for (Index j = 0; j < f.cols(); ++j) {
      const Vector col = f.col(j);
      const Vector r = op_->residual(col);
      logp(j) = -0.5 * r.squaredNorm() * inv_var;
      if (scores) scores->col(j) = -inv_var * op_->apply_jacobian_transpose(col, r);
    }
  }

 private:
  ResidualPtr op_;
  double sigma_;
};

// ---------------------------------------------------------------------------

/// Histogram belief about f at one grid index: bins [edges[k], edges[k+1]) with masses[k].
struct HistogramLocation {
  Index index = 0;
  std::vector<double> edges;
  std::vector<double> masses;
};

/// sum_j log sum_k p_k / (b+_k - b-_k) [Phi((b+_k - f_j)/nu) - Phi((b-_k - f_j)/nu)].
/// The bin-width normalisation sits inside the mixture, so each term is a density in f.
class SmoothedHistogram final : public Likelihood {
 public:
  SmoothedHistogram(Index m, std::vector<HistogramLocation> locations, double bandwidth = 0.5)
      : m_(m), nu_(bandwidth), locations_(std::move(locations)) {
    if (!(nu_ > 0.0)) throw ConfigError("histogram bandwidth must be positive");
    for (const auto& loc : locations_) {
      if (loc.index < 0 || loc.index >= m_) throw ConfigError("histogram location index out of range");
      if (loc.edges.size() != loc.masses.size() + 1 || loc.masses.empty())
        throw ConfigError("histogram location needs K masses and K+1 edges");
      double total = 0.0;
      for (std::size_t k = 0; k < loc.masses.size(); ++k) {
        if (!(loc.masses[k] >= 0.0) || !std::isfinite(loc.masses[k])) throw ConfigError("histogram masses must be >= 0");
        if (!(loc.edges[k + 1] > loc.edges[k]) || !std::isfinite(loc.edges[k]) || !std::isfinite(loc.edges[k + 1]))
          throw ConfigError("histogram edges must be finite and strictly increasing");
        total += loc.masses[k];
      }
      if (total == 0.0) throw ConfigError("histogram location has zero total mass");
      if (std::abs(total - 1.0) > 1e-6) throw ConfigError("histogram masses must sum to 1 within 1e-6");
    }
  }

  Index dim() const override { return m_; }
  std::string name() const override { return "histogram"; }
  double bandwidth() const { return nu_; }
  const std::vector<HistogramLocation>& locations() const { return locations_; }

  /// log q and d log q / df for one location at value f.
  std::pair<double, double> location_term(const HistogramLocation& loc, double f) const {
    const std::size_t k_count = loc.masses.size();
    std::vector<double> log_terms(k_count, -std::numeric_limits<double>::infinity());
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < k_count; ++k) {
      if (loc.masses[k] == 0.0) continue;
      const double a = (loc.edges[k + 1] - f) / nu_;
      const double b = (loc.edges[k] - f) / nu_;
      log_terms[k] = std::log(loc.masses[k]) - std::log(loc.edges[k + 1] - loc.edges[k]) + log_normal_cdf_diff(a, b);
      mx = std::max(mx, log_terms[k]);
    }
    double s = 0.0;
    for (double lt : log_terms) s += std::exp(lt - mx);
    const double logq = mx + std::log(s);
    double grad = 0.0;
    for (std::size_t k = 0; k < k_count; ++k) {
      if (loc.masses[k] == 0.0) continue;
      const double a = (loc.edges[k + 1] - f) / nu_;
      const double b = (loc.edges[k] - f) / nu_;
      const double lw = std::log(loc.masses[k]) - std::log(loc.edges[k + 1] - loc.edges[k]) - logq;
      grad += (std::exp(lw + log_normal_pdf(b)) - std::exp(lw + log_normal_pdf(a))) / nu_;
    }
    return {logq, grad};
  }

  void evaluate(const Matrix& f, Vector& logp, Matrix* scores) const override {
    check(f);
    logp.setZero(f.cols());
    if (scores) scores->setZero(f.rows(), f.cols());
    for (Index j = 0; j < f.cols(); ++j)
      for (const auto& loc : locations_) {
        const auto [lq, g] = location_term(loc, f(loc.index, j));
        logp(j) += lq;
        if (scores) (*scores)(loc.index, j) += g;
      }
  }

 private:
  Index m_;
  double nu_;
  std::vector<HistogramLocation> locations_;
};

/// Independent conditions: log-densities and scores add.
class ProductLikelihood final : public Likelihood {
 public:
  explicit ProductLikelihood(std::vector<LikelihoodPtr> terms) : terms_(std::move(terms)) {
    if (terms_.empty()) throw ConfigError("product likelihood needs at least one term");
    for (const auto& t : terms_) {
      if (!t) throw ConfigError("product likelihood: null term");
      if (t->dim() != terms_.front()->dim()) throw DimensionError("product likelihood: terms disagree on dimension");
    }
  }
  Index dim() const override { return terms_.front()->dim(); }
  bool has_score() const override {
    for (const auto& t : terms_)
      if (!t->has_score()) return false;
    return true;
  }
  std::string name() const override {
    std::string s = "product(";
    for (std::size_t i = 0; i < terms_.size(); ++i) s += (i ? "," : "") + terms_[i]->name();
    return s + ")";
  }
  const std::vector<LikelihoodPtr>& terms() const { return terms_; }

  void evaluate(const Matrix& f, Vector& logp, Matrix* scores) const override {
    check(f);
    logp.setZero(f.cols());
    if (scores) scores->setZero(f.rows(), f.cols());
    Vector lp;
    Matrix s;
    for (const auto& t : terms_) {
      t->evaluate(f, lp, scores ? &s : nullptr);
      logp += lp;
      if (scores) *scores += s;
    }
  }

 private:
  std::vector<LikelihoodPtr> terms_;
};

/// p(C | L z + m): a likelihood on whitened coordinates z, score L^T s.
class AffinePullback final : public Likelihood {
 public:
  AffinePullback(LikelihoodPtr inner, Matrix lower, Vector shift)
      : inner_(std::move(inner)), lower_(std::move(lower)), shift_(std::move(shift)) {
    if (!inner_) throw ConfigError("AffinePullback: missing likelihood");
    if (lower_.rows() != inner_->dim() || shift_.size() != inner_->dim())
      throw DimensionError("AffinePullback: map does not match likelihood dimension");
  }
  Index dim() const override { return lower_.cols(); }
  bool has_score() const override { return inner_->has_score(); }
  std::string name() const override { return "pullback(" + inner_->name() + ")"; }

  void evaluate(const Matrix& z, Vector& logp, Matrix* scores) const override {
    check(z);
    Matrix f = lower_.triangularView<Eigen::Lower>() * z;
    f.colwise() += shift_;
    if (!scores) {
      inner_->evaluate(f, logp, nullptr);
      return;
    }
    Matrix s;
    inner_->evaluate(f, logp, &s);
    *scores = lower_.triangularView<Eigen::Lower>().transpose() * s;
  }

 private:
  LikelihoodPtr inner_;
  Matrix lower_;
  Vector shift_;
};

}  // namespace flowgp
