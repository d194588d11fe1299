#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "flowgp/core.hpp"

namespace flowgp {

enum class KernelFamily { SquaredExponential, Periodic, ProductSE2D, ProductSEPeriodic };

inline std::string_view to_string(KernelFamily f) {
  switch (f) {
    case KernelFamily::SquaredExponential: return "squared_exponential";
    case KernelFamily::Periodic: return "periodic";
    case KernelFamily::ProductSE2D: return "product_se_2d";
    case KernelFamily::ProductSEPeriodic: return "product_se_periodic";
  }
  return "unknown";
}

inline KernelFamily kernel_family_from_string(std::string_view name) {
  if (name == "squared_exponential" || name == "se") return KernelFamily::SquaredExponential;
  if (name == "periodic") return KernelFamily::Periodic;
  if (name == "product_se_2d") return KernelFamily::ProductSE2D;
  if (name == "product_se_periodic") return KernelFamily::ProductSEPeriodic;
  throw ConfigError("unknown kernel family '" + std::string(name) + "'");
}

/// Prior mean: zero, a constant c, or the affine function a + b * x[0].
struct MeanFunction {
  enum class Kind { Zero, Constant, Affine };

  Kind kind = Kind::Zero;
  double offset = 0.0;
  double slope = 0.0;

  static MeanFunction zero() { return {}; }
  static MeanFunction constant(double c) { return {Kind::Constant, c, 0.0}; }
  static MeanFunction affine(double a, double b) { return {Kind::Affine, a, b}; }

  Index parameter_count() const {
    switch (kind) {
      case Kind::Zero: return 0;
      case Kind::Constant: return 1;
      case Kind::Affine: return 2;
    }
    return 0;
  }

  Vector evaluate(const Points& x) const {
    switch (kind) {
      case Kind::Zero: return Vector::Zero(x.rows());
      case Kind::Constant: return Vector::Constant(x.rows(), offset);
      case Kind::Affine: return (offset + slope * x.col(0).array()).matrix();
    }
    return Vector::Zero(x.rows());
  }
};

/// Parametric covariance function plus prior mean over inputs in R^d.
///
/// SquaredExponential uses one lengthscale per input dimension; ProductSE2D is
/// the same form restricted to two inputs. Periodic is the standard
/// exp(-2 sin^2(pi r / p) / l^2) form. ProductSEPeriodic multiplies an SE and a
/// periodic factor in one input; a second lengthscale, when present, is used
/// for the periodic factor.
struct KernelSpec {
  KernelFamily family = KernelFamily::SquaredExponential;
  Vector lengthscales = Vector::Ones(1);
  double variance = 1.0;
  double period = 1.0;
  MeanFunction mean;

  Index input_dim() const {
    switch (family) {
      case KernelFamily::SquaredExponential: return lengthscales.size();
      case KernelFamily::ProductSE2D: return 2;
      case KernelFamily::Periodic:
      case KernelFamily::ProductSEPeriodic: return 1;
    }
    return 0;
  }

  bool uses_period() const {
    return family == KernelFamily::Periodic || family == KernelFamily::ProductSEPeriodic;
  }

  void validate() const {
    if (lengthscales.size() == 0) throw ConfigError("kernel needs at least one lengthscale");
    if ((lengthscales.array() <= 0.0).any() || !lengthscales.allFinite())
      throw ConfigError("kernel lengthscales must be positive");
    if (!(variance > 0.0) || !std::isfinite(variance)) throw ConfigError("kernel variance must be positive");
    if (uses_period() && !(period > 0.0)) throw ConfigError("kernel period must be positive");
    if (family == KernelFamily::ProductSE2D && lengthscales.size() != 2)
      throw ConfigError("product_se_2d needs exactly two lengthscales");
    if (family == KernelFamily::Periodic && lengthscales.size() != 1)
      throw ConfigError("periodic kernel takes one lengthscale");
    if (family == KernelFamily::ProductSEPeriodic && lengthscales.size() > 2)
      throw ConfigError("product_se_periodic takes one or two lengthscales");
  }

  double operator()(const Eigen::Ref<const Eigen::RowVectorXd>& a,
                    const Eigen::Ref<const Eigen::RowVectorXd>& b) const {
    switch (family) {
      case KernelFamily::SquaredExponential:
      case KernelFamily::ProductSE2D: {
        const double q = ((a - b).array() / lengthscales.transpose().array()).square().sum();
        return variance * std::exp(-0.5 * q);
      }
      case KernelFamily::Periodic: {
        const double s = std::sin(std::numbers::pi * std::abs(a(0) - b(0)) / period);
        return variance * std::exp(-2.0 * s * s / (lengthscales(0) * lengthscales(0)));
      }
      case KernelFamily::ProductSEPeriodic: {
        const double r = a(0) - b(0);
        const double l_se = lengthscales(0);
        const double l_per = lengthscales(lengthscales.size() - 1);
        const double s = std::sin(std::numbers::pi * std::abs(r) / period);
        return variance * std::exp(-0.5 * r * r / (l_se * l_se) - 2.0 * s * s / (l_per * l_per));
      }
    }
    return 0.0;
  }
};

/// Cross-covariance matrix k(X, X') with X (m x d) and X' (m' x d).
inline Matrix kernel_gram(const KernelSpec& spec, const Points& x, const Points& xp) {
  spec.validate();
  const Index d = spec.input_dim();
  if (x.cols() != d || xp.cols() != d)
    throw DimensionError("kernel_gram: points have " + std::to_string(x.cols()) + "/" +
                         std::to_string(xp.cols()) + " columns, kernel expects " + std::to_string(d));
  Matrix k(x.rows(), xp.rows());
  if (spec.family == KernelFamily::SquaredExponential || spec.family == KernelFamily::ProductSE2D) {
    const Eigen::RowVectorXd inv = spec.lengthscales.cwiseInverse().transpose();
    const Matrix xs = x.array().rowwise() * inv.array();
    const Matrix ys = xp.array().rowwise() * inv.array();
    const Vector xn = xs.rowwise().squaredNorm();
    const Vector yn = ys.rowwise().squaredNorm();
    k.noalias() = -2.0 * xs * ys.transpose();
    k.colwise() += xn;
    k.rowwise() += yn.transpose();
    k = (-0.5 * k.array().max(0.0)).exp() * spec.variance;
    return k;
  }
  for (Index i = 0; i < x.rows(); ++i)
    for (Index j = 0; j < xp.rows(); ++j) k(i, j) = spec(x.row(i), xp.row(j));
  return k;
}

inline Matrix kernel_gram(const KernelSpec& spec, const Points& x) {
  Matrix k = kernel_gram(spec, x, x);
  // Exact symmetry; the vectorised distance expansion is symmetric only up to rounding.
  k = 0.5 * (k + k.transpose()).eval();
  k.diagonal().setConstant(spec.variance);
  return k;
}

/// Tensor-product grid with `counts[d]` points on [lower[d], upper[d]]; the first
/// dimension varies slowest.
inline Points tensor_grid(const Vector& lower, const Vector& upper, const std::vector<Index>& counts) {
  const Index d = lower.size();
  if (upper.size() != d || static_cast<Index>(counts.size()) != d)
    throw DimensionError("tensor_grid: inconsistent dimensions");
  Index total = 1;
  for (Index c : counts) {
    if (c < 1) throw ConfigError("tensor_grid: every axis needs at least one point");
    total *= c;
  }
  Points out(total, d);
  for (Index row = 0; row < total; ++row) {
    Index rem = row;
    for (Index k = d - 1; k >= 0; --k) {
      const Index c = counts[static_cast<std::size_t>(k)];
      const Index idx = rem % c;
      rem /= c;
      out(row, k) = c == 1 ? lower(k) : lower(k) + (upper(k) - lower(k)) * static_cast<double>(idx) / static_cast<double>(c - 1);
    }
  }
  return out;
}

}  // namespace flowgp
