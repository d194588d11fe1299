#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "flowgp/core.hpp"

namespace flowgp {

struct PendulumTrajectory {
  Vector times;
  Vector theta;
  Vector omega;
};

/// theta'' + sin(theta) + damping theta' = 0 by classical RK4, reporting the state at
/// each requested time (non-decreasing, starting at or after 0). Each interval is
/// split into equal substeps no longer than max_step.
inline PendulumTrajectory solve_damped_pendulum(double theta0, double omega0, double damping, const Vector& times,
                                                double max_step = 1e-3) {
  if (!(max_step > 0.0)) throw ConfigError("pendulum solver: max_step must be positive");
  PendulumTrajectory out{times, Vector(times.size()), Vector(times.size())};
  double t = 0.0, th = theta0, om = omega0;
  auto accel = [damping](double a, double w) { return -std::sin(a) - damping * w; };
  for (Index k = 0; k < times.size(); ++k) {
    const double target = times(k);
    if (target < t - 1e-15) throw ConfigError("pendulum solver: times must be non-decreasing and >= 0");
    const double span = target - t;
    const auto n = static_cast<long>(std::ceil(span / max_step - 1e-12));
    const double h = n > 0 ? span / static_cast<double>(n) : 0.0;
    for (long s = 0; s < n; ++s) {
      const double k1a = om, k1w = accel(th, om);
      const double k2a = om + 0.5 * h * k1w, k2w = accel(th + 0.5 * h * k1a, om + 0.5 * h * k1w);
      const double k3a = om + 0.5 * h * k2w, k3w = accel(th + 0.5 * h * k2a, om + 0.5 * h * k2w);
      const double k4a = om + h * k3w, k4w = accel(th + h * k3a, om + h * k3w);
      th += h / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a);
      om += h / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w);
    }
    t = target;
    out.theta(k) = th;
    out.omega(k) = om;
  }
  return out;
}

/// Periodic Allen-Cahn field u_t = eps u_xx + 5u - 5u^3 on x in [-1, 1), t in [0, t_end],
/// from u(x, 0) = x^2 cos(pi x), by second-order differences in x and RK4 in time.
/// Every time step is stored; evaluation interpolates linearly in x and t.
class AllenCahnSolution {
 public:
  AllenCahnSolution(Index nx = 2048, double eps = 1e-5, double dt = 1e-3, double t_end = 1.0)
      : nx_(nx), dx_(2.0 / static_cast<double>(nx)), dt_(dt) {
    if (nx < 8 || !(dt > 0.0) || !(t_end > 0.0)) throw ConfigError("Allen-Cahn solver: bad resolution");
    const auto steps = static_cast<Index>(std::llround(t_end / dt));
    dt_ = t_end / static_cast<double>(steps);
    // Stability of explicit RK4 on the diffusion and reaction parts.
    if (4.0 * eps * dt_ / (dx_ * dx_) > 2.5 || 10.0 * dt_ > 2.5) throw ConfigError("Allen-Cahn solver: time step too large");
    u_.resize(steps + 1, nx);
    Vector u(nx);
    for (Index i = 0; i < nx; ++i) {
      const double x = -1.0 + dx_ * static_cast<double>(i);
      u(i) = x * x * std::cos(std::numbers::pi * x);
    }
    u_.row(0) = u.transpose();
    auto rhs = [&](const Vector& v) {
      Vector r(nx);
      const double c = eps / (dx_ * dx_);
      for (Index i = 0; i < nx; ++i) {
        const double left = v((i + nx - 1) % nx);
        const double right = v((i + 1) % nx);
        r(i) = c * (left - 2.0 * v(i) + right) + 5.0 * v(i) - 5.0 * v(i) * v(i) * v(i);
      }
      return r;
    };
    for (Index s = 0; s < steps; ++s) {
      const Vector k1 = rhs(u);
      const Vector k2 = rhs(u + 0.5 * dt_ * k1);
      const Vector k3 = rhs(u + 0.5 * dt_ * k2);
      const Vector k4 = rhs(u + dt_ * k3);
      u += dt_ / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      u_.row(s + 1) = u.transpose();
    }
  }

  double operator()(double x, double t) const {
    if (!(t >= 0.0) || t > dt_ * static_cast<double>(u_.rows() - 1) + 1e-12) throw DomainError("Allen-Cahn: t outside solved range");
    double pos = (x + 1.0) / dx_;
    pos -= std::floor(pos / static_cast<double>(nx_)) * static_cast<double>(nx_);
    const auto i0 = static_cast<Index>(std::floor(pos)) % nx_;
    const Index i1 = (i0 + 1) % nx_;
    const double wx = pos - std::floor(pos);
    const double tp = std::min(t / dt_, static_cast<double>(u_.rows() - 1));
    const auto j0 = std::min(static_cast<Index>(std::floor(tp)), u_.rows() - 1);
    const Index j1 = std::min(j0 + 1, u_.rows() - 1);
    const double wt = tp - static_cast<double>(j0);
    auto at = [&](Index j) { return (1.0 - wx) * u_(j, i0) + wx * u_(j, i1); };
    return (1.0 - wt) * at(j0) + wt * at(j1);
  }

 private:
  Index nx_;
  double dx_;
  double dt_;
  Matrix u_;  // (steps + 1) x nx
};

/// Viscous Burgers u_t + u u_x = nu u_xx on x in [-1, 1] with u(x, 0) = -sin(pi x) and
/// u(+-1, t) = 0, by the Cole-Hopf transform:
///   u = -int sin(pi (x - e)) g(x - e) G(e) de / int g(x - e) G(e) de,
///   g(y) = exp(-cos(pi y) / (2 pi nu)),  G(e) = exp(-e^2 / (4 nu t)),
/// integrated with the trapezoid rule over |e| <= 10 sqrt(2 nu t).
inline double burgers_exact(double x, double t, double nu = 0.02, int nodes = 4001) {
  if (t < 0.0) throw DomainError("burgers_exact: t must be >= 0");
  if (t == 0.0) return -std::sin(std::numbers::pi * x);
  const double width = std::sqrt(4.0 * nu * t);
  const double half = 10.0 * width / std::numbers::sqrt2;
  const double h = 2.0 * half / static_cast<double>(nodes - 1);
  const double c = 1.0 / (2.0 * std::numbers::pi * nu);
  // Shift exponents by their bound c so nothing overflows.
  double num = 0.0, den = 0.0;
  for (int k = 0; k < nodes; ++k) {
    const double e = -half + h * k;
    const double y = x - e;
    const double w = std::exp(-std::cos(std::numbers::pi * y) * c - c - e * e / (width * width)) *
                     (k == 0 || k == nodes - 1 ? 0.5 : 1.0);
    num += std::sin(std::numbers::pi * y) * w;
    den += w;
  }
  return -num / den;
}

}  // namespace flowgp
