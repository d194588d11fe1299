#pragma once

#include <cmath>
#include <string>

#include <Eigen/Eigenvalues>

#include "flowgp/core.hpp"
#include "flowgp/gaussian.hpp"
#include "flowgp/schedule.hpp"

namespace flowgp {

struct BridgeMoments {
  Vector mean;
  Matrix cov;
};

/// Closed-form probability-flow dynamics transporting N(0, I) at t = 1 to the
/// base Gaussian N(m, K) at t = 0. Marginals are N(alpha m, A(t)) with
/// A(t) = alpha^2 K + (1 - alpha^2) I.
///
/// Every A(t)^{-1} product goes through one cached eigendecomposition
/// K = Q diag(lambda) Q^T, since A(t) has eigenvalues 1 + alpha^2 (lambda - 1)
/// in the same basis. All state arguments are column batches (m x n).
class FlowOperator {
 public:
  FlowOperator(GaussianState base, Schedule schedule) : base_(std::move(base)), schedule_(schedule) {
    schedule_.validate();
    Eigen::SelfAdjointEigenSolver<Matrix> es(base_.cov);
    if (es.info() != Eigen::Success) throw FactorizationError("FlowOperator: eigendecomposition failed");
    lambda_ = es.eigenvalues().cwiseMax(0.0);
    basis_ = es.eigenvectors();
    mean_coords_ = basis_.transpose() * base_.mean;
  }

  /// Flow whose base law is N(0, I); the basis is the identity and no
  /// rotations are applied, so all identities hold exactly.
  static FlowOperator standard(Index m, Schedule schedule) { return FlowOperator(m, schedule); }

  const GaussianState& base() const { return base_; }
  const Schedule& schedule() const { return schedule_; }
  Index dim() const { return lambda_.size(); }
  const Vector& eigenvalues() const { return lambda_; }
  bool isotropic() const { return isotropic_; }

  /// Eigenvalues of A(t).
  Vector a_eigenvalues(double t) const {
    const double a2 = sq_alpha(t);
    return (1.0 + a2 * (lambda_.array() - 1.0)).matrix();
  }

  Matrix to_eigen(const Matrix& f) const { return isotropic_ ? f : Matrix(basis_.transpose() * f); }
  Matrix from_eigen(const Matrix& y) const { return isotropic_ ? y : Matrix(basis_ * y); }
  const Vector& mean_in_eigenbasis() const { return mean_coords_; }

  /// A(t)^{-1} F.
  Matrix apply_A_inverse(const Matrix& f, double t) const {
    check_shape(f);
    const Vector inv = a_eigenvalues(require_positive_time(t)).cwiseInverse();
    return from_eigen(inv.asDiagonal() * to_eigen(f));
  }

  /// Gaussian score of the time-t marginal: -A^{-1}(f - alpha m).
  Matrix score(const Matrix& f, double t) const {
    check_shape(f);
    const double a = alpha(t);
    const Vector inv = a_eigenvalues(t).cwiseInverse();
    Matrix y = to_eigen(f);
    y.colwise() -= a * mean_coords_;
    return from_eigen(-(inv.asDiagonal() * y));
  }

  /// -1/2 beta(t) [A^{-1} b + (I - A^{-1}) f], equivalently -1/2 beta (f + score).
  Matrix velocity(const Matrix& f, double t) const {
    check_shape(f);
    const double b = schedule_.beta(t);
    const double a = alpha(t);
    const Vector inv = a_eigenvalues(t).cwiseInverse();
    Matrix y = to_eigen(f);
    Matrix v(y.rows(), y.cols());
    for (Index j = 0; j < y.cols(); ++j)
      v.col(j) = -0.5 * b * (y.col(j).array() - inv.array() * (y.col(j).array() - a * mean_coords_.array())).matrix();
    return from_eigen(v);
  }

  /// E[f0 | f_t] = m + alpha K A^{-1} (f_t - alpha m).
  Matrix bridge_mean(const Matrix& f, double t) const {
    check_shape(f);
    const double a = alpha(t);
    const Vector gain = jacobian_eigenvalues(t);
    Matrix y = to_eigen(f);
    y.colwise() -= a * mean_coords_;
    Matrix out = from_eigen(gain.asDiagonal() * y);
    out.colwise() += base_.mean;
    return out;
  }

  /// Eigenvalues of the bridge covariance K - alpha^2 K A^{-1} K.
  Vector bridge_eigenvalues(double t) const {
    const double one_minus = schedule_.one_minus_alpha_sq(require_positive_time(t));
    return (lambda_.array() * one_minus / a_eigenvalues(t).array()).matrix();
  }

  Matrix bridge_covariance(double t) const {
    const Vector d = bridge_eigenvalues(t);
    if (isotropic_) return d.asDiagonal();
    return basis_ * d.asDiagonal() * basis_.transpose();
  }

  /// B with B B^T equal to the bridge covariance.
  Matrix bridge_factor(double t) const {
    const Vector d = bridge_eigenvalues(t).cwiseSqrt();
    if (isotropic_) return d.asDiagonal();
    return basis_ * d.asDiagonal();
  }

  /// Eigenvalues of the denoiser Jacobian alpha K A^{-1}.
  Vector jacobian_eigenvalues(double t) const {
    const double a = alpha(require_positive_time(t));
    return (a * lambda_.array() / a_eigenvalues(t).array()).matrix();
  }

  /// (alpha K A^{-1}) G; the Jacobian is symmetric, so this is also its transpose.
  Matrix apply_denoiser_jacobian(const Matrix& g, double t) const {
    check_shape(g);
    const Vector d = jacobian_eigenvalues(t);
    return from_eigen(d.asDiagonal() * to_eigen(g));
  }

  BridgeMoments bridge_moments(const Vector& f, double t) const {
    return {bridge_mean(f, t).col(0), bridge_covariance(t)};
  }

  /// Exact draw from the t = 1 marginal N(alpha(1) m, A(1)) for standard-normal columns Z.
  Matrix initial_state(const Matrix& z) const {
    check_shape(z);
    const double a = alpha(1.0);
    const Vector root = a_eigenvalues(1.0).cwiseSqrt();
    Matrix y = root.asDiagonal() * to_eigen(z);
    y.colwise() += a * mean_coords_;
    return from_eigen(y);
  }

 private:
  FlowOperator(Index m, Schedule schedule)
      : schedule_(schedule), lambda_(Vector::Ones(m)), mean_coords_(Vector::Zero(m)), isotropic_(true) {
    schedule_.validate();
    base_.mean = Vector::Zero(m);
    base_.cov = Matrix::Identity(m, m);
    base_.chol = Matrix::Identity(m, m);
  }

  double alpha(double t) const { return schedule_.alpha(require_positive_time(t)); }
  double sq_alpha(double t) const { return std::exp(2.0 * schedule_.log_alpha(t)); }

  static double require_positive_time(double t) {
    if (!(t > 0.0 && t <= 1.0)) throw DomainError("flow: t must lie in (0, 1]");
    return t;
  }

  void check_shape(const Matrix& f) const {
    if (f.rows() != dim())
      throw DimensionError("flow: state has " + std::to_string(f.rows()) + " rows, expected " + std::to_string(dim()));
  }

  GaussianState base_;
  Schedule schedule_;
  Vector lambda_;
  Matrix basis_;
  Vector mean_coords_;
  bool isotropic_ = false;
};

inline Vector velocity_unconditional(const FlowOperator& prior_flow, const Vector& f, double t) {
  return prior_flow.velocity(f, t).col(0);
}

/// Same dynamics as the unconditional flow, built on the linear-Gaussian posterior.
inline Vector velocity_conditional(const FlowOperator& posterior_flow, const Vector& f, double t) {
  return posterior_flow.velocity(f, t).col(0);
}

/// L^{-1}(f - m) with L the lower factor of the posterior covariance.
inline Vector whiten(const GaussianState& posterior, const Vector& f) { return posterior.whiten(f); }
inline Vector unwhiten(const GaussianState& posterior, const Vector& z) { return posterior.unwhiten(z); }

inline Matrix whiten(const GaussianState& posterior, const Matrix& f) {
  Matrix r = f.colwise() - posterior.mean;
  posterior.chol.triangularView<Eigen::Lower>().solveInPlace(r);
  return r;
}

inline Matrix unwhiten(const GaussianState& posterior, const Matrix& z) {
  Matrix out = posterior.chol.triangularView<Eigen::Lower>() * z;
  out.colwise() += posterior.mean;
  return out;
}

/// Explicit Euler integration of the linear flow from t = 1 down to the end of
/// the grid, one trajectory per column of the standard-normal matrix Z. The
/// start state is the exact t = 1 marginal. Modes decouple in the eigenbasis,
/// so the integration runs there.
inline Matrix integrate_linear(const FlowOperator& flow, const TimeGrid& grid, const Matrix& z) {
  if (grid.times.size() < 2) throw ConfigError("integrate_linear: grid needs at least two times");
  Matrix y = flow.to_eigen(flow.initial_state(z));
  const Vector& c = flow.mean_in_eigenbasis();
  const Schedule& s = flow.schedule();
  for (std::size_t j = 0; j + 1 < grid.times.size(); ++j) {
    const double t = grid.times[j];
    const double dt = t - grid.times[j + 1];
    const double b = s.beta(t);
    const double a = s.alpha(t);
    const Vector inv = flow.a_eigenvalues(t).cwiseInverse();
    // f <- f - dt * v with v = -1/2 beta (y - (y - a c) / A)
    for (Index col = 0; col < y.cols(); ++col) {
      auto yc = y.col(col).array();
      yc += 0.5 * b * dt * (yc - inv.array() * (yc - a * c.array()));
    }
    if (!y.allFinite())
      throw DomainError("integrate_linear: non-finite state at t = " + std::to_string(grid.times[j + 1]));
  }
  return flow.from_eigen(y);
}

inline Vector integrate_linear(const FlowOperator& flow, const TimeGrid& grid, const Vector& z) {
  return integrate_linear(flow, grid, Matrix(z)).col(0);
}

}  // namespace flowgp
