#pragma once

// Hand-rolled generators and independent dense oracles shared by the test suites.
// Oracles here deliberately avoid the library's own factorisations and spectral
// shortcuts so they can catch mistakes in them.

#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "flowgp/core.hpp"
#include "flowgp/likelihoods.hpp"

namespace flowgp::testing {

inline std::mt19937_64 rng_for(std::uint64_t seed) { return std::mt19937_64(seed); }

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Matrix random_matrix(Index r, Index c, std::mt19937_64& rng) { return standard_normal(r, c, rng); }

inline Matrix random_orthogonal(Index m, std::mt19937_64& rng) {
  Eigen::HouseholderQR<Matrix> qr(random_matrix(m, m, rng));
  return qr.householderQ() * Matrix::Identity(m, m);
}

/// SPD matrix Q diag(spectrum) Q^T with a random orthogonal Q.
inline Matrix spd_with_spectrum(const Vector& spectrum, std::mt19937_64& rng) {
  const Matrix q = random_orthogonal(spectrum.size(), rng);
  Matrix k = q * spectrum.asDiagonal() * q.transpose();
  return 0.5 * (k + k.transpose());
}

/// Spectrum drawn uniformly from [lo, hi].
inline Vector random_spectrum(Index m, double lo, double hi, std::mt19937_64& rng) {
  Vector v(m);
  for (Index i = 0; i < m; ++i) v(i) = uniform(rng, lo, hi);
  return v;
}

inline Matrix random_spd(Index m, std::mt19937_64& rng) {
  const Matrix b = random_matrix(m, m, rng);
  return b * b.transpose() + 0.5 * Matrix::Identity(m, m);
}

/// Principal square root through a self-adjoint eigensolve.
inline Matrix sqrtm(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(a);
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

/// Closed-form W2^2 between N(m1, S1) and N(m2, S2), general (non-commuting) form.
inline double gaussian_w2_squared(const Vector& m1, const Matrix& s1, const Vector& m2, const Matrix& s2) {
  const Matrix r1 = sqrtm(s1);
  const Matrix cross = sqrtm(r1 * s2 * r1);
  return (m1 - m2).squaredNorm() + (s1 + s2 - 2.0 * cross).trace();
}

/// Gaussian conditioning written out with explicit inverses.
struct DenseGaussian {
  Vector mean;
  Matrix cov;
};

inline DenseGaussian dense_condition(const Vector& m, const Matrix& k, const Matrix& l, const Vector& y,
                                     const Matrix& gamma) {
  const Matrix s = l * k * l.transpose() + gamma;
  const Matrix gain = k * l.transpose() * s.inverse();
  return {m + gain * (y - l * m), k - gain * l * k};
}

inline double dense_log_normal(const Vector& x, const Vector& mean, const Matrix& cov) {
  const Index n = x.size();
  const Vector r = x - mean;
  return -0.5 * (r.dot(cov.inverse() * r) + std::log(cov.determinant()) + static_cast<double>(n) * std::log(2.0 * std::numbers::pi));
}

/// Central finite-difference gradient of a scalar function.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x, double h) {
  Vector g(x.size());
  Vector xp = x, xm = x;
  for (Index i = 0; i < x.size(); ++i) {
    xp(i) = x(i) + h;
    xm(i) = x(i) - h;
    g(i) = (f(xp) - f(xm)) / (2.0 * h);
    xp(i) = xm(i) = x(i);
  }
  return g;
}

/// Relative L2 error of an analytic score against finite differences of log p.
inline double score_fd_error(const Likelihood& lik, const Vector& f, double h) {
  const auto [lp, s] = lik.at(f);
  (void)lp;
  const Vector fd = fd_gradient([&](const Vector& x) { return lik.at(x).first; }, f, h);
  const double scale = std::max(fd.norm(), 1e-8);
  return (s - fd).norm() / scale;
}

/// A likelihood with an input generator that keeps its margins or residuals in
/// the range where the score is informative, and a finite-difference step
/// scaled to that range.
struct LikelihoodCase {
  std::string name;
  LikelihoodPtr lik;
  std::function<Vector(std::mt19937_64&)> draw;
  double step;
};

inline std::vector<LikelihoodCase> likelihood_cases() {
  std::vector<LikelihoodCase> cases;
  const Index m = 20;
  const double dx = 1.0 / static_cast<double>(m - 1);
  const double nu = 1e-2;
  auto monotone = ProbitInequality::monotone(m, dx, nu);
  // Increments of sd 2 nu dx put each margin / nu near N(0, 4).
  auto draw_monotone = [=](std::mt19937_64& rng) {
    Vector f(m);
    f(0) = 0.5;
    for (Index i = 1; i < m; ++i) f(i) = f(i - 1) + 2.0 * nu * dx * standard_normal(1, 1, rng)(0, 0);
    return f;
  };
  cases.push_back({"monotone", monotone, draw_monotone, 1e-3 * nu * dx});

  auto bounds = ProbitInequality::bounds(Vector::Zero(m), Vector::Ones(m), nu);
  auto draw_bounds = [=](std::mt19937_64& rng) {
    Vector f(m);
    for (Index i = 0; i < m; ++i) f(i) = std::uniform_real_distribution<double>(-3.0 * nu, 1.0 + 3.0 * nu)(rng);
    return f;
  };
  cases.push_back({"bounds", bounds, draw_bounds, 1e-3 * nu});

  auto draw_field = [](Index n, double scale) {
    return [=](std::mt19937_64& rng) { return Vector(scale * standard_normal(n, 1, rng)); };
  };
  cases.push_back({"pendulum",
                   std::make_shared<GaussianResidual>(std::make_shared<PendulumResidual>(30, 0.2, 0.2), 1e-2),
                   draw_field(30, 1.0), 1e-6});

  const GridField2D field = GridField2D::unit_domain(8, 6);
  cases.push_back({"allen_cahn",
                   std::make_shared<GaussianResidual>(std::make_shared<AllenCahnResidual>(field, 1e-2), 1e-2),
                   draw_field(field.size(), 1.0), 1e-6});
  cases.push_back({"burgers",
                   std::make_shared<GaussianResidual>(std::make_shared<BurgersResidual>(field, 0.02), 1e-2),
                   draw_field(field.size(), 1.0), 1e-6});
  cases.push_back({"boundary_dirichlet",
                   std::make_shared<GaussianResidual>(std::make_shared<BoundaryResidual>(field, BoundaryKind::DirichletZero), 1e-2),
                   draw_field(field.size(), 1.0), 1e-6});
  cases.push_back({"boundary_periodic",
                   std::make_shared<GaussianResidual>(std::make_shared<BoundaryResidual>(field, BoundaryKind::SymmetricPeriodic), 1e-2),
                   draw_field(field.size(), 1.0), 1e-6});

  auto lin_rng = std::mt19937_64(404);
  const Matrix g = standard_normal(4, 12, lin_rng);
  cases.push_back({"linear",
                   std::make_shared<GaussianResidual>(LinearResidual::from_dense(g, standard_normal(4, 1, lin_rng).col(0)), 0.1),
                   draw_field(12, 1.0), 1e-6});

  std::vector<HistogramLocation> locs;
  locs.push_back({1, {0.0, 1.0, 2.0, 3.0}, {0.2, 0.5, 0.3}});
  locs.push_back({4, {-1.0, 0.5, 2.5}, {0.6, 0.4}});
  locs.push_back({7, {0.0, 0.1, 0.2, 4.0}, {0.0, 0.7, 0.3}});
  auto hist = std::make_shared<SmoothedHistogram>(10, locs, 0.5);
  cases.push_back({"histogram", hist,
                   [](std::mt19937_64& rng) {
                     Vector f(10);
                     for (Index i = 0; i < 10; ++i) f(i) = std::uniform_real_distribution<double>(-1.5, 4.5)(rng);
                     return f;
                   },
                   1e-5});

  cases.push_back({"product", std::make_shared<ProductLikelihood>(std::vector<LikelihoodPtr>{monotone, bounds}),
                   draw_monotone, 1e-3 * nu * dx});

  // Pullback through a well-conditioned lower factor; whitened inputs are drawn
  // so that L z + shift reproduces the monotone generator exactly.
  auto pb_rng = std::mt19937_64(505);
  Matrix lower = (0.1 * standard_normal(m, m, pb_rng)).triangularView<Eigen::Lower>();
  lower.diagonal().array() = 1.0;
  const Vector shift = 0.01 * standard_normal(m, 1, pb_rng).col(0);
  auto pullback = std::make_shared<AffinePullback>(monotone, lower, shift);
  cases.push_back({"pullback", pullback,
                   [=](std::mt19937_64& rng) {
                     return Vector(lower.triangularView<Eigen::Lower>().solve(draw_monotone(rng) - shift));
                   },
                   1e-4 * nu * dx});

  cases.push_back({"constant", std::make_shared<ConstantLikelihood>(5, -1.0), draw_field(5, 1.0), 1e-6});
  return cases;
}

/// Per-coordinate mean within `k` standard errors and covariance within `frob`
/// relative Frobenius error.
struct MomentCheck {
  double worst_se = 0.0;
  double cov_rel = 0.0;
  bool pass(double k = 3.0, double frob = 0.1) const { return worst_se <= k && cov_rel <= frob; }
};

inline MomentCheck check_moments(const Matrix& samples, const Vector& mean, const Matrix& cov) {
  const double n = static_cast<double>(samples.rows());
  const Vector mu = samples.colwise().mean().transpose();
  const Matrix c = samples.rowwise() - mu.transpose();
  const Matrix emp = c.transpose() * c / (n - 1.0);
  MomentCheck out;
  for (Index i = 0; i < mean.size(); ++i) {
    const double se = std::sqrt(std::max(cov(i, i), 1e-300) / n);
    out.worst_se = std::max(out.worst_se, std::abs(mu(i) - mean(i)) / se);
  }
  out.cov_rel = (emp - cov).norm() / cov.norm();
  return out;
}

}  // namespace flowgp::testing
