#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include "flowgp/core.hpp"
#include "flowgp/gaussian.hpp"
#include "flowgp/kernel.hpp"

namespace flowgp {

/// Closed search interval for one hyperparameter. lower == upper fixes the parameter.
struct Bounds {
  double lower = 0.0;
  double upper = 0.0;

  static Bounds fixed(double v) { return {v, v}; }
  bool is_fixed() const { return lower == upper; }
};

struct HyperparameterSearch {
  std::vector<Bounds> lengthscales;  ///< one per kernel lengthscale
  Bounds variance{};
  std::optional<Bounds> period;      ///< required for periodic families
  std::vector<Bounds> mean;          ///< one per mean parameter (offset, then slope)
  int grid_points = 7;               ///< per free parameter on the coarse grid
  int max_grid_evaluations = 4096;   ///< grid is thinned per axis to stay under this
  int starts = 3;                    ///< Nelder-Mead starts from the best grid points
  int random_starts = 0;             ///< extra starts drawn uniformly inside the bounds
  std::uint64_t seed = 0;
  bool refine = true;
  int max_iterations = 400;
};

struct FitResult {
  KernelSpec spec;
  double log_marginal = -std::numeric_limits<double>::infinity();
  double best_grid_log_marginal = -std::numeric_limits<double>::infinity();
  int evaluations = 0;
};

namespace detail {

// Free hyperparameters packed into an unconstrained-ish vector: positive
// quantities live in log space, mean parameters are linear.
class HyperParameterization {
 public:
  HyperParameterization(const KernelSpec& tmpl, const HyperparameterSearch& search) : template_(tmpl) {
    tmpl.validate();
    if (static_cast<Index>(search.lengthscales.size()) != tmpl.lengthscales.size())
      throw ConfigError("fit: need one lengthscale bound per lengthscale");
    if (static_cast<Index>(search.mean.size()) != tmpl.mean.parameter_count())
      throw ConfigError("fit: need one bound per mean parameter");
    for (std::size_t i = 0; i < search.lengthscales.size(); ++i) add(Slot::Lengthscale, static_cast<Index>(i), search.lengthscales[i], true);
    add(Slot::Variance, 0, search.variance, true);
    if (tmpl.uses_period()) {
      if (!search.period) throw ConfigError("fit: periodic kernel needs period bounds");
      add(Slot::Period, 0, *search.period, true);
    }
    for (std::size_t i = 0; i < search.mean.size(); ++i) add(Slot::Mean, static_cast<Index>(i), search.mean[i], false);
  }

  Index free_count() const { return static_cast<Index>(free_.size()); }
  double lower(Index k) const { return free_[static_cast<std::size_t>(k)].lo; }
  double upper(Index k) const { return free_[static_cast<std::size_t>(k)].hi; }

  bool inside(const Vector& theta) const {
    for (Index k = 0; k < free_count(); ++k)
      if (!(theta(k) >= lower(k) && theta(k) <= upper(k))) return false;
    return true;
  }

  KernelSpec decode(const Vector& theta) const {
    KernelSpec s = template_;
    for (const auto& f : fixed_) set(s, f, f.lo);
    for (Index k = 0; k < free_count(); ++k) set(s, free_[static_cast<std::size_t>(k)], theta(k));
    return s;
  }

 private:
  enum class Slot { Lengthscale, Variance, Period, Mean };
  struct Entry {
    Slot slot;
    Index index;
    bool log_scale;
    double lo;
    double hi;
  };

  void add(Slot slot, Index index, const Bounds& b, bool positive) {
    if (!std::isfinite(b.lower) || !std::isfinite(b.upper) || b.lower > b.upper)
      throw ConfigError("fit: empty or non-finite parameter bounds");
    if (positive && !(b.lower > 0.0)) throw ConfigError("fit: bounds of positive parameters must be > 0");
    Entry e{slot, index, positive, positive ? std::log(b.lower) : b.lower, positive ? std::log(b.upper) : b.upper};
    if (b.is_fixed()) {
      // Keep the exact bound value rather than exp(log(value)).
      e.log_scale = false;
      e.lo = e.hi = b.lower;
      fixed_.push_back(e);
    } else {
      free_.push_back(e);
    }
  }

  static void set(KernelSpec& s, const Entry& e, double raw) {
    const double v = e.log_scale ? std::exp(raw) : raw;
    switch (e.slot) {
      case Slot::Lengthscale: s.lengthscales(e.index) = v; break;
      case Slot::Variance: s.variance = v; break;
      case Slot::Period: s.period = v; break;
      case Slot::Mean:
        if (e.index == 0) s.mean.offset = v;
        else s.mean.slope = v;
        break;
    }
  }

  KernelSpec template_;
  std::vector<Entry> free_;
  std::vector<Entry> fixed_;
};

struct NelderMeadContext {
  const HyperParameterization* param;
  const std::function<double(const KernelSpec&)>* objective;
  int* evaluations;
};

inline double nm_negative_objective(const gsl_vector* x, void* raw) {
  auto* ctx = static_cast<NelderMeadContext*>(raw);
  const Index n = ctx->param->free_count();
  Vector theta(n);
  for (Index k = 0; k < n; ++k) theta(k) = gsl_vector_get(x, static_cast<std::size_t>(k));
  if (!ctx->param->inside(theta)) return 1e300;
  ++*ctx->evaluations;
  try {
    const double v = (*ctx->objective)(ctx->param->decode(theta));
    return std::isfinite(v) ? -v : 1e300;
  } catch (const FactorizationError&) {
    return 1e300;
  }
}

inline Vector nelder_mead(const HyperParameterization& param, const std::function<double(const KernelSpec&)>& objective,
                          const Vector& start, int max_iterations, int& evaluations) {
  const auto n = static_cast<std::size_t>(param.free_count());
  NelderMeadContext ctx{&param, &objective, &evaluations};
  gsl_multimin_function fn{&nm_negative_objective, n, &ctx};
  gsl_vector* x = gsl_vector_alloc(n);
  gsl_vector* step = gsl_vector_alloc(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto kk = static_cast<Index>(k);
    gsl_vector_set(x, k, start(kk));
    gsl_vector_set(step, k, 0.1 * (param.upper(kk) - param.lower(kk)));
  }
  gsl_multimin_fminimizer* s = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, n);
  gsl_multimin_fminimizer_set(s, &fn, x, step);
  for (int it = 0; it < max_iterations; ++it) {
    if (gsl_multimin_fminimizer_iterate(s) != GSL_SUCCESS) break;
    if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(s), 1e-6) == GSL_SUCCESS) break;
  }
  Vector best(static_cast<Index>(n));
  for (std::size_t k = 0; k < n; ++k) best(static_cast<Index>(k)) = gsl_vector_get(s->x, k);
  gsl_multimin_fminimizer_free(s);
  gsl_vector_free(step);
  gsl_vector_free(x);
  return best;
}

inline FitResult fit_with_objective(const KernelSpec& tmpl, const HyperparameterSearch& search,
                                    const std::function<double(const KernelSpec&)>& objective) {
  const HyperParameterization param(tmpl, search);
  const Index n = param.free_count();
  FitResult out;
  auto safe_eval = [&](const Vector& theta) {
    ++out.evaluations;
    try {
      const double v = objective(param.decode(theta));
      return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
    } catch (const FactorizationError&) {
      return -std::numeric_limits<double>::infinity();
    }
  };

  if (n == 0) {
    out.spec = param.decode(Vector());
    out.log_marginal = out.best_grid_log_marginal = safe_eval(Vector());
    return out;
  }

  if (search.grid_points < 1) throw ConfigError("fit: grid_points must be >= 1");
  int per_axis = search.grid_points;
  while (per_axis > 2 && std::pow(static_cast<double>(per_axis), static_cast<double>(n)) > search.max_grid_evaluations)
    --per_axis;

  struct Candidate {
    double value;
    Vector theta;
  };
  std::vector<Candidate> grid;
  std::vector<int> idx(static_cast<std::size_t>(n), 0);
  for (;;) {
    Vector theta(n);
    for (Index k = 0; k < n; ++k) {
      const double u = per_axis == 1 ? 0.5 : static_cast<double>(idx[static_cast<std::size_t>(k)]) / (per_axis - 1);
      theta(k) = param.lower(k) + u * (param.upper(k) - param.lower(k));
    }
    grid.push_back({safe_eval(theta), theta});
    Index k = 0;
    while (k < n && ++idx[static_cast<std::size_t>(k)] == per_axis) idx[static_cast<std::size_t>(k++)] = 0;
    if (k == n) break;
  }
  // Stable order keeps ties deterministic.
  std::stable_sort(grid.begin(), grid.end(), [](const Candidate& a, const Candidate& b) { return a.value > b.value; });
  out.best_grid_log_marginal = grid.front().value;
  Vector best_theta = grid.front().theta;
  double best_value = grid.front().value;

  if (search.refine) {
    std::vector<Vector> starts;
    for (int i = 0; i < search.starts && i < static_cast<int>(grid.size()); ++i) starts.push_back(grid[static_cast<std::size_t>(i)].theta);
    auto rng = make_stream(search.seed, 0, 0x66697421ULL);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int i = 0; i < search.random_starts; ++i) {
      Vector theta(n);
      for (Index k = 0; k < n; ++k) theta(k) = param.lower(k) + unif(rng) * (param.upper(k) - param.lower(k));
      starts.push_back(theta);
    }
    for (const auto& s : starts) {
      int evals = 0;
      const Vector theta = nelder_mead(param, objective, s, search.max_iterations, evals);
      out.evaluations += evals;
      const double v = param.inside(theta) ? safe_eval(theta) : -std::numeric_limits<double>::infinity();
      if (v > best_value) {
        best_value = v;
        best_theta = theta;
      }
    }
  }
  out.spec = param.decode(best_theta);
  out.log_marginal = best_value;
  return out;
}

}  // namespace detail

/// Maximises the log marginal likelihood over the bounded hyperparameters by a
/// coarse grid followed by Nelder-Mead from the best grid points. The result is
/// never worse than the best grid point.
inline FitResult fit_hyperparameters(const KernelSpec& tmpl, const DataModel& dm, const Points& x,
                                     const HyperparameterSearch& search) {
  const std::function<double(const KernelSpec&)> obj = [&](const KernelSpec& s) {
    return log_marginal_likelihood(s, dm, x);
  };
  return detail::fit_with_objective(tmpl, search, obj);
}

inline FitResult fit_hyperparameters(const KernelSpec& tmpl, const TrainingData& data,
                                     const HyperparameterSearch& search) {
  const std::function<double(const KernelSpec&)> obj = [&](const KernelSpec& s) {
    return log_marginal_likelihood(s, data);
  };
  return detail::fit_with_objective(tmpl, search, obj);
}

}  // namespace flowgp
