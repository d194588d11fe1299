#pragma once

#include <cmath>
#include <numbers>

#include "flowgp/core.hpp"
#include "flowgp/gaussian.hpp"

namespace flowgp {

inline double rmse(const Vector& means, const Vector& targets) {
  if (means.size() != targets.size() || means.size() == 0) throw DimensionError("rmse: size mismatch or empty");
  return std::sqrt((means - targets).squaredNorm() / static_cast<double>(means.size()));
}

/// Mean of 1/2 log(2 pi s2) + (y - mu)^2 / (2 s2); `variances` already include observation noise.
inline double nlpd(const Vector& means, const Vector& variances, const Vector& targets) {
  if (means.size() != targets.size() || variances.size() != targets.size() || means.size() == 0)
    throw DimensionError("nlpd: size mismatch or empty");
  if ((variances.array() <= 0.0).any()) throw DomainError("nlpd: predictive variances must be positive");
  const Eigen::ArrayXd v = variances.array();
  const Eigen::ArrayXd r = (targets - means).array();
  return (0.5 * (2.0 * std::numbers::pi * v).log() + r.square() / (2.0 * v)).mean();
}

struct PredictiveMoments {
  Vector mean;
  Vector variance;  ///< unbiased sample variance plus observation noise
};

/// Column moments of a sample matrix (one row per sample).
inline PredictiveMoments predictive_moments(const Matrix& samples, double noise_variance = 0.0) {
  const Index n = samples.rows();
  if (n == 0) throw DimensionError("predictive_moments: no samples");
  PredictiveMoments out;
  out.mean = samples.colwise().mean().transpose();
  if (n > 1) {
    const Matrix centred = samples.rowwise() - out.mean.transpose();
    out.variance = centred.colwise().squaredNorm().transpose() / static_cast<double>(n - 1);
  } else {
    out.variance = Vector::Zero(samples.cols());
  }
  out.variance.array() += noise_variance;
  return out;
}

/// Kernel-smoothing extension of grid samples f (rows) to new inputs:
///   mu(x_new) + k(x_new, X*) K**^{-1} (f - mu(X*))
/// with mu and k the GP posterior given the training data.
inline Matrix extend_to_test_points(const Matrix& samples, const GpPosterior& gp, const Points& grid,
                                    const Points& x_new) {
  if (samples.cols() != grid.rows()) throw DimensionError("extend_to_test_points: samples do not match grid");
  Matrix k = gp.covariance(grid, grid);
  k = 0.5 * (k + k.transpose()).eval();
  const auto c = chol_jitter(k);
  Matrix w = gp.covariance(grid, x_new);  // m x p
  c.factor.triangularView<Eigen::Lower>().solveInPlace(w);
  c.factor.triangularView<Eigen::Lower>().transpose().solveInPlace(w);
  const Vector mu_grid = gp.mean(grid);
  const Vector mu_new = gp.mean(x_new);
  Matrix out = (samples.rowwise() - mu_grid.transpose()) * w;
  out.rowwise() += mu_new.transpose();
  return out;
}

}  // namespace flowgp
