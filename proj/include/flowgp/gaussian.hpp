#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <limits>

#include <Eigen/Cholesky>

#include "flowgp/core.hpp"
#include "flowgp/kernel.hpp"

namespace flowgp {

struct CholeskyResult {
  Matrix factor;       ///< lower triangular
  double jitter = 0.0; ///< absolute diagonal jitter that was added
};

/// Relative jitter ladder, multiplied by trace(cov) / m.
inline constexpr std::array<double, 6> kJitterLadder{0.0, 1e-12, 1e-10, 1e-8, 1e-6, 1e-4};

namespace detail {

// Numerically positive definite: every pivot clears a small multiple of the
// largest diagonal entry, so rank-deficient input does not slip through on
// rounding noise.
inline bool try_cholesky(const Matrix& a, Matrix& factor) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) return false;
  factor = llt.matrixL();
  const double max_diag = a.diagonal().cwiseAbs().maxCoeff();
  const double floor = 64.0 * std::numeric_limits<double>::epsilon() * max_diag;
  for (Index i = 0; i < factor.rows(); ++i) {
    const double p = factor(i, i);
    if (!std::isfinite(p) || p * p <= floor) return false;
  }
  return true;
}

}  // namespace detail

/// Cholesky factor of a symmetric matrix with the smallest jitter from the ladder
/// that makes the factorisation succeed.
inline CholeskyResult chol_jitter(const Matrix& cov) {
  if (cov.rows() != cov.cols()) throw DimensionError("chol_jitter: matrix is not square");
  const Index m = cov.rows();
  if (m == 0) return {Matrix(0, 0), 0.0};
  if (!cov.allFinite()) throw FactorizationError("chol_jitter: non-finite entries");
  const double scale = std::max(cov.trace() / static_cast<double>(m), std::numeric_limits<double>::min());
  Matrix factor;
  for (double rel : kJitterLadder) {
    const double jitter = rel * scale;
    Matrix a = cov;
    a.diagonal().array() += jitter;
    if (detail::try_cholesky(a, factor)) return {std::move(factor), jitter};
  }
  throw FactorizationError("chol_jitter: matrix is not positive definite even with jitter " +
                           std::to_string(kJitterLadder.back() * scale));
}

/// Finite-dimensional Gaussian law N(mean, cov) with a cached lower factor of cov + jitter * I.
struct GaussianState {
  Vector mean;
  Matrix cov;
  Matrix chol;
  double jitter_used = 0.0;

  static GaussianState from_moments(Vector mean, Matrix cov) {
    if (cov.rows() != cov.cols() || cov.rows() != mean.size())
      throw DimensionError("GaussianState: mean/cov size mismatch");
    GaussianState s;
    s.cov = 0.5 * (cov + cov.transpose());
    s.mean = std::move(mean);
    auto c = chol_jitter(s.cov);
    s.chol = std::move(c.factor);
    s.jitter_used = c.jitter;
    return s;
  }

  static GaussianState standard(Index m) {
    return from_moments(Vector::Zero(m), Matrix::Identity(m, m));
  }

  Index dim() const { return mean.size(); }

  /// m + L z
  Vector unwhiten(const Eigen::Ref<const Vector>& z) const {
    Vector out = mean;
    out.noalias() += chol.triangularView<Eigen::Lower>() * z;
    return out;
  }

  /// L^{-1} (f - m)
  Vector whiten(const Eigen::Ref<const Vector>& f) const {
    Vector r = f - mean;
    chol.triangularView<Eigen::Lower>().solveInPlace(r);
    return r;
  }

  double log_density(const Eigen::Ref<const Vector>& f) const {
    const Vector z = whiten(f);
    const double logdet = 2.0 * chol.diagonal().array().log().sum();
    return -0.5 * (z.squaredNorm() + logdet + static_cast<double>(dim()) * std::log(2.0 * std::numbers::pi));
  }
};

/// Linear-Gaussian data model y = L f + eps, eps ~ N(0, Gamma).
struct DataModel {
  Matrix obs_operator;
  Vector observations;
  Matrix noise_cov;

  static DataModel isotropic(Matrix op, Vector y, double noise_variance) {
    const Index n = y.size();
    return {std::move(op), std::move(y), noise_variance * Matrix::Identity(n, n)};
  }

  void validate(Index m) const {
    const Index n = observations.size();
    if (obs_operator.rows() != n || obs_operator.cols() != m)
      throw DimensionError("DataModel: observation operator is " + std::to_string(obs_operator.rows()) + "x" +
                           std::to_string(obs_operator.cols()) + ", expected " + std::to_string(n) + "x" +
                           std::to_string(m));
    if (noise_cov.rows() != n || noise_cov.cols() != n) throw DimensionError("DataModel: noise covariance size");
    if ((noise_cov - noise_cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + noise_cov.cwiseAbs().maxCoeff()))
      throw ConfigError("DataModel: noise covariance is not symmetric");
  }
};

/// Predictive law of f given y under the data model:
///   mean = m + K L^T (L K L^T + Gamma)^{-1} (y - L m)
///   cov  = K - K L^T (L K L^T + Gamma)^{-1} L K
inline GaussianState gp_condition(const GaussianState& prior, const DataModel& dm) {
  const Index m = prior.dim();
  dm.validate(m);
  if (dm.observations.size() == 0) return prior;
  const Matrix kl = prior.cov * dm.obs_operator.transpose();  // m x n
  Matrix s = dm.obs_operator * kl + dm.noise_cov;
  s = 0.5 * (s + s.transpose()).eval();
  const auto c = chol_jitter(s);
  const auto lower = c.factor.triangularView<Eigen::Lower>();
  Vector resid = dm.observations - dm.obs_operator * prior.mean;
  Matrix v = kl.transpose();  // n x m
  lower.solveInPlace(v);      // L_s^{-1} L K
  lower.solveInPlace(resid);
  Vector mean = prior.mean + v.transpose() * resid;
  Matrix cov = prior.cov;
  cov.noalias() -= v.transpose() * v;
  return GaussianState::from_moments(std::move(mean), std::move(cov));
}

/// Observations of f at arbitrary input locations with isotropic Gaussian noise.
struct TrainingData {
  Points inputs;
  Vector targets;
  double noise_variance = 0.0;

  Index size() const { return targets.size(); }
};

/// Function-space GP posterior: evaluates predictive means and cross-covariances at
/// arbitrary inputs. With no training points it is the prior.
class GpPosterior {
 public:
  GpPosterior(KernelSpec kernel, TrainingData data) : kernel_(std::move(kernel)), data_(std::move(data)) {
    kernel_.validate();
    if (data_.inputs.rows() != data_.targets.size()) throw DimensionError("TrainingData: inputs/targets size");
    if (data_.size() > 0) {
      if (data_.inputs.cols() != kernel_.input_dim()) throw DimensionError("TrainingData: input dimension");
      Matrix s = kernel_gram(kernel_, data_.inputs);
      s.diagonal().array() += data_.noise_variance;
      auto c = chol_jitter(s);
      factor_ = std::move(c.factor);
      alpha_ = data_.targets - kernel_.mean.evaluate(data_.inputs);
      factor_.triangularView<Eigen::Lower>().solveInPlace(alpha_);
      factor_.triangularView<Eigen::Lower>().transpose().solveInPlace(alpha_);
    }
  }

  const KernelSpec& kernel() const { return kernel_; }
  const TrainingData& data() const { return data_; }

  Vector mean(const Points& x) const {
    Vector mu = kernel_.mean.evaluate(x);
    if (data_.size() > 0) mu.noalias() += kernel_gram(kernel_, x, data_.inputs) * alpha_;
    return mu;
  }

  Matrix covariance(const Points& a, const Points& b) const {
    Matrix k = kernel_gram(kernel_, a, b);
    if (data_.size() > 0) {
      Matrix va = kernel_gram(kernel_, data_.inputs, a);
      Matrix vb = kernel_gram(kernel_, data_.inputs, b);
      factor_.triangularView<Eigen::Lower>().solveInPlace(va);
      factor_.triangularView<Eigen::Lower>().solveInPlace(vb);
      k.noalias() -= va.transpose() * vb;
    }
    return k;
  }

  /// Predictive Gaussian on a grid of input locations.
  GaussianState on(const Points& grid) const {
    Matrix k = kernel_gram(kernel_, grid);
    if (data_.size() > 0) {
      Matrix v = kernel_gram(kernel_, data_.inputs, grid);
      factor_.triangularView<Eigen::Lower>().solveInPlace(v);
      k.noalias() -= v.transpose() * v;
    }
    return GaussianState::from_moments(mean(grid), std::move(k));
  }

 private:
  KernelSpec kernel_;
  TrainingData data_;
  Matrix factor_;
  Vector alpha_;
};

/// Prior law of f on the points X.
inline GaussianState gp_prior(const KernelSpec& spec, const Points& x) {
  return GaussianState::from_moments(spec.mean.evaluate(x), kernel_gram(spec, x));
}

/// log N(y; L m, L K L^T + Gamma) with (m, K) the prior on X.
inline double log_marginal_likelihood(const KernelSpec& spec, const DataModel& dm, const Points& x) {
  const Vector m = spec.mean.evaluate(x);
  const Matrix k = kernel_gram(spec, x);
  dm.validate(x.rows());
  Matrix s = dm.obs_operator * k * dm.obs_operator.transpose() + dm.noise_cov;
  s = 0.5 * (s + s.transpose()).eval();
  const auto c = chol_jitter(s);
  Vector r = dm.observations - dm.obs_operator * m;
  c.factor.triangularView<Eigen::Lower>().solveInPlace(r);
  const double n = static_cast<double>(dm.observations.size());
  return -0.5 * r.squaredNorm() - c.factor.diagonal().array().log().sum() - 0.5 * n * std::log(2.0 * std::numbers::pi);
}

/// Marginal likelihood of training data observed directly at their inputs.
inline double log_marginal_likelihood(const KernelSpec& spec, const TrainingData& data) {
  const Index n = data.size();
  return log_marginal_likelihood(spec, DataModel::isotropic(Matrix::Identity(n, n), data.targets, data.noise_variance),
                                 data.inputs);
}

}  // namespace flowgp
