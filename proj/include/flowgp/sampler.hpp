#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "flowgp/core.hpp"
#include "flowgp/flow.hpp"
#include "flowgp/gaussian.hpp"
#include "flowgp/guidance.hpp"
#include "flowgp/likelihoods.hpp"
#include "flowgp/schedule.hpp"

namespace flowgp {

enum class Integrator { Euler, Heun };

inline std::string_view to_string(Integrator i) { return i == Integrator::Euler ? "euler" : "heun"; }

inline Integrator integrator_from_string(std::string_view s) {
  if (s == "euler") return Integrator::Euler;
  if (s == "heun") return Integrator::Heun;
  throw ConfigError("unknown integrator '" + std::string(s) + "' (expected euler or heun)");
}

struct SamplerConfig {
  bool whitened = true;
  Index steps = 1000;
  double t_min = 1e-3;
  Schedule schedule;
  GuidanceConfig guidance;
  bool record_trajectory = false;
  std::uint64_t seed = 0;
  Index samples = 100;
  Integrator integrator = Integrator::Euler;
  bool clip = true;
  int threads = 1;
  Index block = 32;  ///< trajectories advanced together; fixed so results do not depend on threads

  void validate() const {
    if (steps < 1) throw ConfigError("sampler: steps must be >= 1");
    if (samples < 1) throw ConfigError("sampler: samples must be >= 1");
    if (block < 1) throw ConfigError("sampler: block must be >= 1");
    if (threads < 1) throw ConfigError("sampler: threads must be >= 1");
    if (!(t_min > 0.0 && t_min <= 1e-3)) throw ConfigError("sampler: t_min must lie in (0, 1e-3]");
    schedule.validate();
    guidance.validate();
  }
};

struct SampleEnsemble {
  Points locations;       ///< grid inputs, one row per coordinate (may be empty)
  Matrix samples;         ///< completed trajectories, one row per sample
  Vector min_ess;         ///< per completed sample, minimum over steps
  Vector mean_ess;        ///< per completed sample, mean over steps
  std::vector<Index> aborted;  ///< trajectory indices dropped for non-finite state
  Index collapse_steps = 0;    ///< (trajectory, step) pairs whose weights all vanished
  double max_velocity_norm = 0.0;  ///< largest norm of any applied (post-clip) velocity
  double wall_seconds = 0.0;
  SamplerConfig config;
  TimeGrid grid;
  std::vector<Matrix> trajectories;  ///< per sample, (T+1) x m, when recorded
  std::vector<std::string> warnings;

  Index size() const { return samples.rows(); }
  Index dim() const { return samples.cols(); }
  double overall_min_ess() const { return min_ess.size() ? min_ess.minCoeff() : 0.0; }
};

namespace detail {

inline std::mt19937_64 state_stream(const SamplerConfig& cfg, Index k) {
  return make_stream(cfg.seed, static_cast<std::uint64_t>(k), 0);
}

inline std::mt19937_64 bank_stream(const SamplerConfig& cfg, Index k) {
  return make_stream(cfg.seed, static_cast<std::uint64_t>(k), 1 + cfg.guidance.reparam_seed);
}

struct BlockResult {
  Matrix f_hat;  // m x B
  Vector min_ess;
  Vector sum_ess;
  std::vector<char> aborted;
  Index collapse_steps = 0;
  double max_norm = 0.0;
  std::vector<Matrix> trajectories;
};

// Whitened guided velocity for a batch of states F (m x B). Bridge samples in
// whitened coordinates are alpha F + sqrt(1 - alpha^2) eps; L eps is cached in LE.
class WhitenedVelocity {
 public:
  WhitenedVelocity(const GaussianState& post, const Likelihood& lik, const SamplerConfig& cfg)
      : post_(post), lik_(lik), cfg_(cfg), s_(cfg.guidance.samples) {}

  Matrix operator()(const Matrix& f_hat, const Matrix& eps, const Matrix& le, double t, Vector& ess,
                    std::vector<char>& collapsed) const {
    const Schedule& sch = cfg_.schedule;
    const double a = sch.alpha(t);
    const double beta = sch.beta(t);
    const double sd = std::sqrt(sch.one_minus_alpha_sq(t));
    const Index b = f_hat.cols();
    const Index m = f_hat.rows();
    const auto lower = post_.chol.triangularView<Eigen::Lower>();
    Matrix lf = lower * f_hat;
    ess = Vector::Ones(b);
    collapsed.assign(static_cast<std::size_t>(b), 0);
    Matrix g(m, b);

    switch (cfg_.guidance.estimator) {
      case Estimator::MC:
      case Estimator::Fisher: {
        Matrix x(m, b * s_);
        for (Index k = 0; k < b; ++k)
          for (Index i = 0; i < s_; ++i)
            x.col(k * s_ + i) = a * lf.col(k) + post_.mean + sd * le.col(k * s_ + i);
        Vector logp;
        Matrix scores;
        const bool mc = cfg_.guidance.estimator == Estimator::MC;
        lik_.evaluate(x, logp, mc ? &scores : nullptr);
        for (Index k = 0; k < b; ++k) {
          const auto w = normalise_log_weights(logp.segment(k * s_, s_));
          ess(k) = w.ess;
          collapsed[static_cast<std::size_t>(k)] = w.collapsed;
          if (w.collapsed) {
            g.col(k).setZero();
            continue;
          }
          if (mc) {
            g.col(k) = weighted_column_sum(scores.middleCols(k * s_, s_), w.weights);
          } else {
            // alpha/(1-alpha^2) (sum w f0_i - alpha f) with f0_i = alpha f + sd eps_i
            g.col(k) = (a / sd) * weighted_column_sum(eps.middleCols(k * s_, s_), w.weights);
          }
        }
        if (mc) {
          Matrix ltg = lower.transpose() * g;
          return (-0.5 * beta * a) * ltg;
        }
        return (-0.5 * beta) * g;
      }
      case Estimator::DPS:
      case Estimator::MPGD: {
        Matrix x = a * lf;
        x.colwise() += post_.mean;
        Vector logp;
        Matrix scores;
        lik_.evaluate(x, logp, &scores);
        Matrix lts = lower.transpose() * scores;
        const double jac = cfg_.guidance.estimator == Estimator::DPS ? a : 1.0;
        return (-0.5 * beta * jac) * lts;
      }
    }
    throw ConfigError("unknown estimator");
  }

 private:
  const GaussianState& post_;
  const Likelihood& lik_;
  const SamplerConfig& cfg_;
  Index s_;
};

inline double clip_columns(Matrix& v, const SamplerConfig& cfg, const std::vector<char>& active) {
  double max_norm = 0.0;
  for (Index k = 0; k < v.cols(); ++k) {
    if (!active[static_cast<std::size_t>(k)]) {
      v.col(k).setZero();
      continue;
    }
    if (!v.col(k).allFinite()) continue;  // caught by the state check
    if (cfg.clip) v.col(k) = smooth_clip(v.col(k), cfg.guidance.clip_tau);
    max_norm = std::max(max_norm, v.col(k).norm());
  }
  return max_norm;
}

inline BlockResult run_whitened_block(const GaussianState& post, const Likelihood& lik, const SamplerConfig& cfg,
                                      const TimeGrid& grid, Index first, Index count) {
  const Index m = post.dim();
  const Index s = cfg.guidance.samples;
  BlockResult r;
  r.f_hat.resize(m, count);
  Matrix eps(m, count * s);
  for (Index k = 0; k < count; ++k) {
    auto rng = state_stream(cfg, first + k);
    r.f_hat.col(k) = standard_normal(m, 1, rng);
    if (cfg.guidance.needs_bank()) {
      auto brng = bank_stream(cfg, first + k);
      eps.middleCols(k * s, s) = standard_normal(m, s, brng);
    }
  }
  Matrix le;
  if (cfg.guidance.estimator == Estimator::MC || cfg.guidance.estimator == Estimator::Fisher)
    le = post.chol.triangularView<Eigen::Lower>() * eps;

  r.min_ess = Vector::Constant(count, std::numeric_limits<double>::infinity());
  r.sum_ess = Vector::Zero(count);
  r.aborted.assign(static_cast<std::size_t>(count), 0);
  std::vector<char> active(static_cast<std::size_t>(count), 1);
  if (cfg.record_trajectory) {
    r.trajectories.assign(static_cast<std::size_t>(count), Matrix(grid.times.size(), m));
    for (Index k = 0; k < count; ++k) r.trajectories[static_cast<std::size_t>(k)].row(0) = post.unwhiten(r.f_hat.col(k)).transpose();
  }

  const WhitenedVelocity velocity(post, lik, cfg);
  Vector ess;
  std::vector<char> collapsed;
  auto account = [&](const Vector& e, const std::vector<char>& c, double weight) {
    for (Index k = 0; k < count; ++k) {
      if (!active[static_cast<std::size_t>(k)]) continue;
      r.min_ess(k) = std::min(r.min_ess(k), e(k));
      r.sum_ess(k) += weight * e(k);
      if (c[static_cast<std::size_t>(k)]) ++r.collapse_steps;
    }
  };

  for (std::size_t j = 0; j + 1 < grid.times.size(); ++j) {
    const double t = grid.times[j];
    const double dt = t - grid.times[j + 1];
    Matrix v = velocity(r.f_hat, eps, le, t, ess, collapsed);
    r.max_norm = std::max(r.max_norm, clip_columns(v, cfg, active));
    if (cfg.integrator == Integrator::Euler) {
      account(ess, collapsed, 1.0);
      r.f_hat -= dt * v;
    } else {
      Matrix pred = r.f_hat - dt * v;
      Vector ess2;
      std::vector<char> collapsed2;
      Matrix v2 = velocity(pred, eps, le, grid.times[j + 1], ess2, collapsed2);
      r.max_norm = std::max(r.max_norm, clip_columns(v2, cfg, active));
      account(ess, collapsed, 0.5);
      account(ess2, collapsed2, 0.5);
      r.f_hat -= (0.5 * dt) * (v + v2);
    }
    for (Index k = 0; k < count; ++k) {
      auto& act = active[static_cast<std::size_t>(k)];
      if (act && !r.f_hat.col(k).allFinite()) {
        act = 0;
        r.aborted[static_cast<std::size_t>(k)] = 1;
        r.f_hat.col(k).setZero();
      }
      if (cfg.record_trajectory)
        r.trajectories[static_cast<std::size_t>(k)].row(static_cast<Index>(j) + 1) =
            post.unwhiten(r.f_hat.col(k)).transpose();
    }
  }
  return r;
}

template <typename Fn>
void run_blocks(Index total, Index block, int threads, Fn&& fn) {
  const Index n_blocks = (total + block - 1) / block;
  if (threads <= 1 || n_blocks <= 1) {
    for (Index b = 0; b < n_blocks; ++b) fn(b);
    return;
  }
  std::atomic<Index> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  const int workers = static_cast<int>(std::min<Index>(threads, n_blocks));
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (Index b = next++; b < n_blocks; b = next++) {
        try {
          fn(b);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

inline void assemble(SampleEnsemble& out, const std::vector<BlockResult>& blocks, const GaussianState* post,
                     const SamplerConfig& cfg, Index steps_weight) {
  Index kept = 0;
  for (const auto& b : blocks)
    for (char a : b.aborted) kept += a ? 0 : 1;
  const Index m = blocks.empty() ? 0 : blocks.front().f_hat.rows();
  out.samples.resize(kept, m);
  out.min_ess.resize(kept);
  out.mean_ess.resize(kept);
  Index row = 0;
  Index index = 0;
  for (const auto& b : blocks) {
    out.collapse_steps += b.collapse_steps;
    out.max_velocity_norm = std::max(out.max_velocity_norm, b.max_norm);
    for (Index k = 0; k < b.f_hat.cols(); ++k, ++index) {
      if (b.aborted[static_cast<std::size_t>(k)]) {
        out.aborted.push_back(index);
        continue;
      }
      // Per-column matvec so a trajectory with zero guidance lands exactly on m + L z.
      if (post) out.samples.row(row) = post->unwhiten(b.f_hat.col(k)).transpose();
      else out.samples.row(row) = b.f_hat.col(k).transpose();
      out.min_ess(row) = b.min_ess(k);
      out.mean_ess(row) = b.sum_ess(k) / static_cast<double>(steps_weight);
      if (cfg.record_trajectory) out.trajectories.push_back(b.trajectories[static_cast<std::size_t>(k)]);
      ++row;
    }
  }
  if (!out.aborted.empty())
    out.warnings.push_back(std::to_string(out.aborted.size()) + " trajectories aborted on non-finite state");
  if (out.collapse_steps > 0)
    out.warnings.push_back("importance weights collapsed on " + std::to_string(out.collapse_steps) +
                           " trajectory steps; guidance set to zero there");
}

}  // namespace detail

/// Guided sampling in whitened coordinates f = L f_hat + m, where the Gaussian
/// part of the flow is the identity and only the guidance term moves the state.
inline SampleEnsemble sample_flowgp(const GaussianState& posterior, const Likelihood& lik, const SamplerConfig& cfg) {
  cfg.validate();
  if (lik.dim() != posterior.dim()) throw DimensionError("sample_flowgp: likelihood and posterior dimensions differ");
  if (!lik.has_score() && cfg.guidance.estimator != Estimator::Fisher)
    throw ConfigError("sample_flowgp: likelihood has no score; use the fisher estimator");
  const auto start = std::chrono::steady_clock::now();
  SampleEnsemble out;
  out.config = cfg;
  out.grid = build_time_grid(cfg.schedule, cfg.steps, cfg.t_min);
  const Index n_blocks = (cfg.samples + cfg.block - 1) / cfg.block;
  std::vector<detail::BlockResult> blocks(static_cast<std::size_t>(n_blocks));
  detail::run_blocks(cfg.samples, cfg.block, cfg.threads, [&](Index b) {
    const Index first = b * cfg.block;
    const Index count = std::min(cfg.block, cfg.samples - first);
    blocks[static_cast<std::size_t>(b)] = detail::run_whitened_block(posterior, lik, cfg, out.grid, first, count);
  });
  detail::assemble(out, blocks, &posterior, cfg, cfg.steps);
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

/// Guided sampling in the original coordinates: the exact linear velocity of the
/// posterior flow plus the smoothly clipped guidance term -1/2 beta g.
inline SampleEnsemble sample_flowgp_unwhitened(const GaussianState& posterior, const Likelihood& lik,
                                               const SamplerConfig& cfg) {
  cfg.validate();
  if (lik.dim() != posterior.dim()) throw DimensionError("sample_flowgp_unwhitened: dimension mismatch");
  if (!lik.has_score() && cfg.guidance.estimator != Estimator::Fisher)
    throw ConfigError("sample_flowgp_unwhitened: likelihood has no score; use the fisher estimator");
  const auto start = std::chrono::steady_clock::now();
  SampleEnsemble out;
  out.config = cfg;
  out.grid = build_time_grid(cfg.schedule, cfg.steps, cfg.t_min);
  const FlowOperator flow(posterior, cfg.schedule);
  const Index m = posterior.dim();
  const Index n_blocks = (cfg.samples + cfg.block - 1) / cfg.block;
  std::vector<detail::BlockResult> blocks(static_cast<std::size_t>(n_blocks));

  detail::run_blocks(cfg.samples, cfg.block, cfg.threads, [&](Index bi) {
    const Index first = bi * cfg.block;
    const Index count = std::min(cfg.block, cfg.samples - first);
    detail::BlockResult r;
    r.f_hat.resize(m, count);
    r.min_ess = Vector::Constant(count, std::numeric_limits<double>::infinity());
    r.sum_ess = Vector::Zero(count);
    r.aborted.assign(static_cast<std::size_t>(count), 0);
    for (Index k = 0; k < count; ++k) {
      auto rng = detail::state_stream(cfg, first + k);
      const Matrix z = standard_normal(m, 1, rng);
      auto brng = detail::bank_stream(cfg, first + k);
      const NoiseBank bank = cfg.guidance.needs_bank() ? NoiseBank::draw(m, cfg.guidance.samples, brng)
                                                       : NoiseBank::zeros(m, cfg.guidance.samples);
      Vector f = flow.initial_state(z).col(0);
      Matrix traj;
      if (cfg.record_trajectory) {
        traj.resize(static_cast<Index>(out.grid.times.size()), m);
        traj.row(0) = f.transpose();
      }
      auto vel = [&](const Vector& state, double t, double& ess, bool& collapsed) {
        const auto g = guidance(flow, lik, state, t, cfg.guidance, bank);
        ess = g.ess;
        collapsed = g.collapsed;
        Vector guide = -0.5 * cfg.schedule.beta(t) * g.value;
        if (cfg.clip) guide = smooth_clip(guide, cfg.guidance.clip_tau);
        r.max_norm = std::max(r.max_norm, guide.norm());
        return Vector(flow.velocity(state, t).col(0) + guide);
      };
      bool ok = true;
      for (std::size_t j = 0; j + 1 < out.grid.times.size() && ok; ++j) {
        const double t = out.grid.times[j];
        const double dt = t - out.grid.times[j + 1];
        double ess = 1.0;
        bool collapsed = false;
        try {
          const Vector v = vel(f, t, ess, collapsed);
          r.min_ess(k) = std::min(r.min_ess(k), ess);
          if (collapsed) ++r.collapse_steps;
          if (cfg.integrator == Integrator::Euler) {
            r.sum_ess(k) += ess;
            f -= dt * v;
          } else {
            double ess2 = 1.0;
            bool collapsed2 = false;
            const Vector v2 = vel(f - dt * v, out.grid.times[j + 1], ess2, collapsed2);
            r.min_ess(k) = std::min(r.min_ess(k), ess2);
            if (collapsed2) ++r.collapse_steps;
            r.sum_ess(k) += 0.5 * (ess + ess2);
            f -= (0.5 * dt) * (v + v2);
          }
        } catch (const DomainError&) {
          ok = false;
        }
        if (!f.allFinite()) ok = false;
        if (ok && cfg.record_trajectory) traj.row(static_cast<Index>(j) + 1) = f.transpose();
      }
      if (!ok) {
        r.aborted[static_cast<std::size_t>(k)] = 1;
        f.setZero();
      }
      r.f_hat.col(k) = f;
      if (cfg.record_trajectory) r.trajectories.push_back(std::move(traj));
    }
    blocks[static_cast<std::size_t>(bi)] = std::move(r);
  });
  detail::assemble(out, blocks, nullptr, cfg, cfg.steps);
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace flowgp
