#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>

#include "flowgp/core.hpp"
#include "flowgp/flow.hpp"
#include "flowgp/likelihoods.hpp"

namespace flowgp {

enum class Estimator { MC, Fisher, DPS, MPGD };

inline std::string_view to_string(Estimator e) {
  switch (e) {
    case Estimator::MC: return "mc";
    case Estimator::Fisher: return "fisher";
    case Estimator::DPS: return "dps";
    case Estimator::MPGD: return "mpgd";
  }
  return "unknown";
}

inline Estimator estimator_from_string(std::string_view s) {
  if (s == "mc") return Estimator::MC;
  if (s == "fisher") return Estimator::Fisher;
  if (s == "dps") return Estimator::DPS;
  if (s == "mpgd") return Estimator::MPGD;
  throw ConfigError("unknown estimator '" + std::string(s) + "' (expected mc, fisher, dps or mpgd)");
}

struct GuidanceConfig {
  Estimator estimator = Estimator::MC;
  Index samples = 5;  ///< S, bridge samples per step
  double clip_tau = 100.0;
  std::uint64_t reparam_seed = 0;

  void validate() const {
    if (samples < 1) throw ConfigError("guidance: S must be >= 1");
    if (!(clip_tau > 0.0)) throw ConfigError("guidance: clip_tau must be positive");
  }
  bool needs_bank() const { return estimator == Estimator::MC || estimator == Estimator::Fisher; }
};

/// Standard-normal draws eps^(i) (m x S), fixed for the lifetime of one trajectory.
struct NoiseBank {
  Matrix eps;

  static NoiseBank draw(Index m, Index samples, std::mt19937_64& rng) { return {standard_normal(m, samples, rng)}; }
  static NoiseBank zeros(Index m, Index samples) { return {Matrix::Zero(m, samples)}; }
  Index size() const { return eps.cols(); }
};

struct ImportanceWeights {
  Vector weights;  ///< normalised; all zero when collapsed
  double ess = 0.0;
  bool collapsed = false;
};

/// Self-normalised weights exp(l_i - logsumexp(l)). NaN counts as -inf.
inline ImportanceWeights normalise_log_weights(const Vector& log_w) {
  ImportanceWeights out;
  double mx = -std::numeric_limits<double>::infinity();
  for (Index i = 0; i < log_w.size(); ++i)
    if (!std::isnan(log_w(i))) mx = std::max(mx, log_w(i));
  out.weights = Vector::Zero(log_w.size());
  if (!std::isfinite(mx)) {
    // +inf would mean an unnormalisable likelihood; treat it as collapse too.
    out.collapsed = true;
    return out;
  }
  double s = 0.0;
  for (Index i = 0; i < log_w.size(); ++i) {
    const double w = std::isnan(log_w(i)) ? 0.0 : std::exp(log_w(i) - mx);
    out.weights(i) = w;
    s += w;
  }
  out.weights /= s;
  out.ess = 1.0 / out.weights.squaredNorm();
  return out;
}

/// sum_i w_i x_i, skipping zero-weight columns so their non-finite values cannot leak in.
inline Vector weighted_column_sum(const Matrix& x, const Vector& w) {
  Vector out = Vector::Zero(x.rows());
  for (Index i = 0; i < x.cols(); ++i)
    if (w(i) != 0.0) out.noalias() += w(i) * x.col(i);
  return out;
}

struct GuidanceResult {
  Vector value;
  double ess = 1.0;
  bool collapsed = false;
};

/// v * tau * tanh(|v| / tau) / (|v| + 1e-8); norm never exceeds tau.
inline Vector smooth_clip(const Vector& v, double tau) {
  if (!(tau > 0.0)) throw ConfigError("smooth_clip: tau must be positive");
  const double n = v.norm();
  if (!std::isfinite(n)) throw DomainError("smooth_clip: non-finite velocity");
  return v * (tau * std::tanh(n / tau) / (n + 1e-8));
}

namespace detail {

inline Matrix bridge_samples(const FlowOperator& flow, const Vector& f_t, double t, const NoiseBank& bank,
                             Vector& mean) {
  if (bank.eps.rows() != flow.dim()) throw DimensionError("guidance: noise bank dimension");
  mean = flow.bridge_mean(f_t, t).col(0);
  Matrix x = flow.bridge_factor(t) * bank.eps;
  x.colwise() += mean;
  return x;
}

}  // namespace detail

/// alpha K A^{-1} sum_i w_i grad log p(C | f0^(i)) with f0^(i) drawn from the bridge.
inline GuidanceResult guidance_mc(const FlowOperator& flow, const Likelihood& lik, const Vector& f_t, double t,
                                  const NoiseBank& bank) {
  Vector mu;
  const Matrix x = detail::bridge_samples(flow, f_t, t, bank, mu);
  Vector logp;
  Matrix scores;
  lik.evaluate(x, logp, &scores);
  const auto w = normalise_log_weights(logp);
  if (w.collapsed) return {Vector::Zero(flow.dim()), 0.0, true};
  return {flow.apply_denoiser_jacobian(weighted_column_sum(scores, w.weights), t).col(0), w.ess, false};
}

/// alpha / (1 - alpha^2) (sum_i w_i f0^(i) - E[f0 | f_t]); needs no score.
inline GuidanceResult guidance_fisher(const FlowOperator& flow, const Likelihood& lik, const Vector& f_t, double t,
                                      const NoiseBank& bank) {
  Vector mu;
  const Matrix x = detail::bridge_samples(flow, f_t, t, bank, mu);
  const Vector logp = lik.log_density(x);
  const auto w = normalise_log_weights(logp);
  if (w.collapsed) return {Vector::Zero(flow.dim()), 0.0, true};
  const Schedule& s = flow.schedule();
  const double scale = s.alpha(t) / s.one_minus_alpha_sq(t);
  return {scale * (weighted_column_sum(x, w.weights) - mu), w.ess, false};
}

/// Jacobian of the affine denoiser applied to the score at E[f0 | f_t].
inline GuidanceResult guidance_dps(const FlowOperator& flow, const Likelihood& lik, const Vector& f_t, double t) {
  const Vector mu = flow.bridge_mean(f_t, t).col(0);
  const auto [lp, s] = lik.at(mu);
  (void)lp;
  return {flow.apply_denoiser_jacobian(s, t).col(0), 1.0, false};
}

/// Raw score at E[f0 | f_t].
inline GuidanceResult guidance_mpgd(const FlowOperator& flow, const Likelihood& lik, const Vector& f_t, double t) {
  const Vector mu = flow.bridge_mean(f_t, t).col(0);
  return {lik.at(mu).second, 1.0, false};
}

inline GuidanceResult guidance(const FlowOperator& flow, const Likelihood& lik, const Vector& f_t, double t,
                               const GuidanceConfig& cfg, const NoiseBank& bank) {
  switch (cfg.estimator) {
    case Estimator::MC: return guidance_mc(flow, lik, f_t, t, bank);
    case Estimator::Fisher: return guidance_fisher(flow, lik, f_t, t, bank);
    case Estimator::DPS: return guidance_dps(flow, lik, f_t, t);
    case Estimator::MPGD: return guidance_mpgd(flow, lik, f_t, t);
  }
  throw ConfigError("unknown estimator");
}

}  // namespace flowgp
