#pragma once

#include <cmath>
#include <vector>

#include "flowgp/core.hpp"

namespace flowgp {

/// Linear beta schedule: beta(t) = beta0 + (beta1 - beta0) t on [0, 1].
struct Schedule {
  double beta0 = 1e-5;
  double beta1 = 10.0;

  void validate() const {
    if (!(beta0 >= 0.0) || !(beta1 >= 0.0) || !std::isfinite(beta0) || !std::isfinite(beta1))
      throw ConfigError("schedule: beta0 and beta1 must be finite and >= 0");
    if (!(beta0 < beta1)) throw ConfigError("schedule: beta1 must exceed beta0 for alpha to decrease");
  }

  static void check_time(double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw DomainError("schedule: t must lie in [0, 1]");
  }

  double beta(double t) const {
    check_time(t);
    return beta0 + (beta1 - beta0) * t;
  }

  /// log alpha(t) = -beta0 t / 2 - (beta1 - beta0) t^2 / 4
  double log_alpha(double t) const {
    check_time(t);
    return -0.5 * beta0 * t - 0.25 * (beta1 - beta0) * t * t;
  }

  double alpha(double t) const { return std::exp(log_alpha(t)); }

  /// 1 - alpha^2, accurate for small t.
  double one_minus_alpha_sq(double t) const { return -std::expm1(2.0 * log_alpha(t)); }

  /// alpha / sqrt(1 - alpha^2 + 1e-8); the guard caps the ratio near 1e4 as t -> 0.
  double snr(double t) const {
    const double a = alpha(t);
    return a / std::sqrt(one_minus_alpha_sq(t) + 1e-8);
  }

  double log_snr(double t) const { return std::log(snr(t)); }

  /// Time at which snr equals `target`, by bisection on the decreasing snr curve.
  double invert_snr(double target, double tol = 1e-12) const {
    double lo = 0.0;
    double hi = 1.0;
    const double log_target = std::log(target);
    if (log_target >= log_snr(0.0)) return 0.0;
    if (log_target <= log_snr(1.0)) return 1.0;
    while (hi - lo > tol) {
      const double mid = 0.5 * (lo + hi);
      if (log_snr(mid) > log_target) lo = mid;
      else hi = mid;
    }
    return 0.5 * (lo + hi);
  }
};

/// Strictly decreasing integration times from 1 down to t_min, uniform in log snr.
struct TimeGrid {
  std::vector<double> times;

  Index steps() const { return static_cast<Index>(times.size()) - 1; }
  double front() const { return times.front(); }
  double back() const { return times.back(); }
};

inline TimeGrid build_time_grid(const Schedule& sched, Index steps, double t_min = 1e-3) {
  sched.validate();
  if (steps < 1) throw ConfigError("time grid needs at least one step");
  if (!(t_min > 0.0 && t_min < 1.0)) throw ConfigError("time grid: t_min must lie in (0, 1)");
  const double l0 = sched.log_snr(1.0);
  const double l1 = sched.log_snr(t_min);
  TimeGrid grid;
  grid.times.resize(static_cast<std::size_t>(steps) + 1);
  grid.times.front() = 1.0;
  grid.times.back() = t_min;
  for (Index j = 1; j < steps; ++j) {
    const double target = l0 + (l1 - l0) * static_cast<double>(j) / static_cast<double>(steps);
    grid.times[static_cast<std::size_t>(j)] = sched.invert_snr(std::exp(target));
  }
  return grid;
}

}  // namespace flowgp
