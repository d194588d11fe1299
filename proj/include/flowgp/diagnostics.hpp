#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "flowgp/core.hpp"
#include "flowgp/flow.hpp"
#include "flowgp/schedule.hpp"

namespace flowgp {

/// lambda_max / lambda_min of a symmetric PSD matrix; +inf when singular.
inline double condition_number(const Matrix& cov) {
  if (cov.rows() != cov.cols() || cov.rows() == 0) throw DimensionError("condition_number: need a square matrix");
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw FactorizationError("condition_number: eigen solver failed");
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0.0)) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

struct StiffnessProfile {
  std::vector<double> times;
  std::vector<double> stiffness;  ///< NaN where undefined
  std::vector<double> a_min;      ///< smallest eigenvalue of A(t)
  std::vector<double> a_max;      ///< largest eigenvalue of A(t)
  bool isotropic = false;         ///< every Jacobian eigenvalue vanishes; the ratio is 0/0
  bool theorem_regime = true;     ///< all covariance eigenvalues in (0, 1)
  std::vector<std::string> notes;

  double at_start() const { return stiffness.empty() ? std::numeric_limits<double>::quiet_NaN() : stiffness.front(); }
};

/// Ratio of largest to smallest |eigenvalue| of the flow Jacobian
/// D(t) = 1/2 beta(t) (I - A(t)^{-1}), from the eigenvalues of the base covariance.
inline StiffnessProfile stiffness_profile(const Vector& cov_eigenvalues, const Schedule& sched,
                                          const std::vector<double>& times) {
  sched.validate();
  StiffnessProfile p;
  p.times = times;
  const Vector& lam = cov_eigenvalues;
  if (lam.size() == 0) throw DimensionError("stiffness_profile: empty spectrum");
  p.theorem_regime = lam.minCoeff() > 0.0 && lam.maxCoeff() < 1.0;
  if (!p.theorem_regime)
    p.notes.push_back("covariance spectrum leaves (0, 1); reporting the raw eigenvalue ratio");
  p.isotropic = (lam.array() == 1.0).all();
  if (p.isotropic) p.notes.push_back("covariance is the identity; stiffness is undefined (0/0)");
  for (double t : times) {
    const double a2 = std::exp(2.0 * sched.log_alpha(t));
    const double beta = sched.beta(t);
    const Vector a = (1.0 + a2 * (lam.array() - 1.0)).matrix();
    const Vector mu = (0.5 * beta * (1.0 - a.array().inverse())).abs().matrix();
    double ratio;
    if (p.isotropic || mu.maxCoeff() == 0.0) ratio = std::numeric_limits<double>::quiet_NaN();
    else if (mu.minCoeff() == 0.0) ratio = std::numeric_limits<double>::infinity();
    else ratio = mu.maxCoeff() / mu.minCoeff();
    p.stiffness.push_back(ratio);
    p.a_min.push_back(a.minCoeff());
    p.a_max.push_back(a.maxCoeff());
  }
  return p;
}

inline StiffnessProfile stiffness_profile(const FlowOperator& flow, const std::vector<double>& times) {
  return stiffness_profile(flow.eigenvalues(), flow.schedule(), times);
}

/// Upper bound on W2^2 between the t = 0 and t = 1 marginals of the flow: the
/// kinetic energy 1/4 int beta^2 [sum_i (a_i - 1)^2 / a_i + alpha^2 |m|^2] dt of
/// the interpolation f_t = alpha m + A(t)^{1/2} z, by the composite trapezoid rule.
/// The mean term vanishes for a zero-mean base.
inline double transport_bound(const Vector& cov_eigenvalues, const Vector& mean, const Schedule& sched,
                              Index quadrature_points = 1001) {
  sched.validate();
  if (quadrature_points < 2) throw ConfigError("transport_bound: need at least two quadrature points");
  const double mean_sq = mean.squaredNorm();
  const double h = 1.0 / static_cast<double>(quadrature_points - 1);
  double total = 0.0;
  for (Index q = 0; q < quadrature_points; ++q) {
    const double t = q == quadrature_points - 1 ? 1.0 : static_cast<double>(q) * h;
    const double a2 = std::exp(2.0 * sched.log_alpha(t));
    const double beta = sched.beta(t);
    const Eigen::ArrayXd a = 1.0 + a2 * (cov_eigenvalues.array() - 1.0);
    const double spectral = ((a - 1.0).square() / a).sum();
    const double integrand = 0.25 * beta * beta * (spectral + a2 * mean_sq);
    total += (q == 0 || q == quadrature_points - 1 ? 0.5 : 1.0) * integrand;
  }
  return total * h;
}

inline double transport_bound(const FlowOperator& flow, Index quadrature_points = 1001) {
  return transport_bound(flow.eigenvalues(), flow.base().mean, flow.schedule(), quadrature_points);
}

}  // namespace flowgp
