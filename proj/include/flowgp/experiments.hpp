#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "flowgp/config.hpp"
#include "flowgp/diagnostics.hpp"
#include "flowgp/fit.hpp"
#include "flowgp/flow.hpp"
#include "flowgp/gaussian.hpp"
#include "flowgp/io.hpp"
#include "flowgp/metrics.hpp"
#include "flowgp/sampler.hpp"
#include "flowgp/solvers.hpp"

namespace flowgp {

/// Command-line overrides applied on top of a config's sampler block.
struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::optional<Index> steps;
  std::optional<Index> samples;
  std::optional<Index> mc_samples;
  std::optional<Estimator> estimator;
  std::optional<bool> whitened;
  std::optional<double> t_min;
  std::optional<double> clip_tau;
  std::optional<int> threads;

  void apply(SamplerConfig& c) const {
    if (seed) c.seed = *seed;
    if (steps) c.steps = *steps;
    if (samples) c.samples = *samples;
    if (mc_samples) c.guidance.samples = *mc_samples;
    if (estimator) c.guidance.estimator = *estimator;
    if (whitened) c.whitened = *whitened;
    if (t_min) c.t_min = *t_min;
    if (clip_tau) c.guidance.clip_tau = *clip_tau;
    if (threads) c.threads = *threads;
  }
};

/// Kernel after optional fitting, the function-space posterior and its grid restriction.
struct PreparedModel {
  KernelSpec kernel;
  std::optional<FitResult> fit;
  Points grid;
  GpPosterior gp;
  GaussianState posterior;
  double fit_seconds = 0.0;
};

inline PreparedModel prepare_model(const ModelConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  KernelSpec kernel = cfg.kernel;
  std::optional<FitResult> fit;
  const TrainingData data = cfg.data.value_or(TrainingData{});
  if (cfg.fit) {
    if (data.size() == 0) throw ConfigError("fit requested but the config has no training data");
    fit = fit_hyperparameters(kernel, data, *cfg.fit);
    kernel = fit->spec;
  }
  const double fit_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  Points grid = cfg.grid.points();
  GpPosterior gp(kernel, data);
  GaussianState post = gp.on(grid);
  return {kernel, fit, std::move(grid), std::move(gp), std::move(post), fit_seconds};
}

struct ConstraintCheck {
  std::string name;
  double bandwidth = 0.0;
  double satisfied_fraction = 0.0;  ///< samples with every margin > -3 nu
  double min_margin = 0.0;
};

/// Margin checks for every probit inequality term in the config. The overall
/// fraction counts samples that satisfy all terms at once.
inline std::vector<ConstraintCheck> check_constraints(const ModelConfig& cfg, const Matrix& samples,
                                                      double* all_fraction = nullptr) {
  std::vector<ConstraintCheck> out;
  std::vector<char> ok(static_cast<std::size_t>(samples.rows()), 1);
  for (const auto& entry : cfg.likelihoods) {
    const auto lik = likelihood_from_json(entry, cfg.grid, cfg.base_dir);
    const auto* probit = dynamic_cast<const ProbitInequality*>(lik.get());
    if (!probit) continue;
    ConstraintCheck c{probit->name(), probit->bandwidth(), 0.0, std::numeric_limits<double>::infinity()};
    const Matrix margins = probit->margins().apply(samples.transpose());
    Index good = 0;
    for (Index k = 0; k < margins.cols(); ++k) {
      const double lo = margins.col(k).minCoeff();
      c.min_margin = std::min(c.min_margin, lo);
      const bool pass = lo > -3.0 * c.bandwidth;
      good += pass ? 1 : 0;
      if (!pass) ok[static_cast<std::size_t>(k)] = 0;
    }
    c.satisfied_fraction = samples.rows() ? static_cast<double>(good) / static_cast<double>(samples.rows()) : 0.0;
    out.push_back(c);
  }
  if (all_fraction) {
    Index good = 0;
    for (char v : ok) good += v;
    *all_fraction = samples.rows() ? static_cast<double>(good) / static_cast<double>(samples.rows()) : 0.0;
  }
  return out;
}

struct TestEvaluation {
  double rmse = 0.0;
  double nlpd = 0.0;
  Matrix predictions;  ///< inputs, y, mean, variance
};

/// Ensemble metrics on held-out points; samples are carried off the grid by kernel smoothing.
inline TestEvaluation evaluate_on_test(const Matrix& samples, const GpPosterior& gp, const Points& grid,
                                       const TrainingData& test) {
  const Matrix at_test = extend_to_test_points(samples, gp, grid, test.inputs);
  const auto pm = predictive_moments(at_test, test.noise_variance);
  TestEvaluation e;
  e.rmse = rmse(pm.mean, test.targets);
  e.nlpd = nlpd(pm.mean, pm.variance, test.targets);
  e.predictions.resize(test.size(), test.inputs.cols() + 3);
  e.predictions << test.inputs, test.targets, pm.mean, pm.variance;
  return e;
}

inline std::vector<std::string> prediction_header(Index input_dim) {
  std::vector<std::string> h;
  const char* names[] = {"x", "t"};
  for (Index c = 0; c < input_dim; ++c) h.push_back(c < 2 ? std::string(names[c]) : "x" + std::to_string(c));
  for (const char* n : {"y", "mean", "variance"}) h.emplace_back(n);
  return h;
}

struct RunReport {
  SampleEnsemble ensemble;
  json summary;  ///< contents of ensemble.json
  json effective_config;
  double fit_seconds = 0.0;
  double total_seconds = 0.0;
};

/// Fits (when asked), samples and evaluates one model; writes ensemble.csv,
/// ensemble.json, config.json, manifest.json, timing.json and, with a test set,
/// predictions.csv into `out`. Everything but timing.json is a pure function of
/// the config and seed.
inline RunReport run_model(const ModelConfig& cfg_in, const RunOptions& opt, const std::filesystem::path& out,
                           const json& provenance = json::object()) {
  const auto start = std::chrono::steady_clock::now();
  ModelConfig cfg = cfg_in;
  opt.apply(cfg.sampler);
  cfg.sampler.validate();
  if (cfg.fit && opt.seed) cfg.fit->seed = *opt.seed;

  PreparedModel model = prepare_model(cfg);
  const LikelihoodPtr lik = cfg.build_likelihood();
  RunReport rep;
  rep.fit_seconds = model.fit_seconds;
  rep.ensemble = cfg.sampler.whitened ? sample_flowgp(model.posterior, *lik, cfg.sampler)
                                      : sample_flowgp_unwhitened(model.posterior, *lik, cfg.sampler);
  rep.ensemble.locations = model.grid;
  const SampleEnsemble& ens = rep.ensemble;

  json& s = rep.summary;
  s["sampler"] = sampler_to_json(cfg.sampler);
  s["likelihood"] = lik->name();
  s["kernel"] = kernel_to_json(model.kernel);
  if (model.fit)
    s["fit"] = {{"log_marginal", model.fit->log_marginal},
                {"best_grid_log_marginal", model.fit->best_grid_log_marginal},
                {"evaluations", model.fit->evaluations}};
  s["posterior"] = {{"dim", model.posterior.dim()}, {"jitter", model.posterior.jitter_used}};
  s["samples_completed"] = ens.size();
  s["aborted"] = ens.aborted;
  s["collapse_steps"] = ens.collapse_steps;
  s["max_velocity_norm"] = ens.max_velocity_norm;
  s["ess"] = {{"min", ens.overall_min_ess()},
              {"mean", ens.mean_ess.size() ? ens.mean_ess.mean() : 0.0},
              {"per_sample_min", std::vector<double>(ens.min_ess.data(), ens.min_ess.data() + ens.min_ess.size())}};
  s["warnings"] = ens.warnings;

  json metrics = json::object();
  if (ens.size() > 0) {
    double all = 0.0;
    const auto checks = check_constraints(cfg, ens.samples, &all);
    if (!checks.empty()) {
      metrics["constraints"] = json::array();
      for (const auto& c : checks)
        metrics["constraints"].push_back({{"name", c.name},
                                          {"bandwidth", c.bandwidth},
                                          {"satisfied_fraction", c.satisfied_fraction},
                                          {"min_margin", c.min_margin}});
      metrics["all_constraints_fraction"] = all;
    }
    if (cfg.test) {
      const auto ev = evaluate_on_test(ens.samples, model.gp, model.grid, *cfg.test);
      metrics["rmse"] = ev.rmse;
      metrics["nlpd"] = ev.nlpd;
      metrics["test_points"] = cfg.test->size();
      write_csv(out / "predictions.csv", prediction_header(cfg.test->inputs.cols()), ev.predictions);
    }
    const auto pm = predictive_moments(ens.samples);
    metrics["mean_ensemble_std"] = pm.variance.array().sqrt().mean();
  }
  s["metrics"] = metrics;

  json eff = cfg.source;
  eff["kernel"] = kernel_to_json(model.kernel);
  eff.erase("fit");
  eff["sampler"] = sampler_to_json(cfg.sampler);
  rep.effective_config = eff;

  write_ensemble_csv(out / "ensemble.csv", ens.samples, model.grid);
  write_json(out / "ensemble.json", s);
  write_json(out / "config.json", eff);
  json manifest;
  manifest["provenance"] = provenance;
  manifest["seed"] = cfg.sampler.seed;
  manifest["config"] = eff;
  if (cfg.fit) manifest["fit_search"] = search_to_json(*cfg.fit);
  manifest["outputs"] = {"ensemble.csv", "ensemble.json", "config.json", "timing.json"};
  if (cfg.test) manifest["outputs"].push_back("predictions.csv");
  write_json(out / "manifest.json", manifest);

  rep.total_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_json(out / "timing.json", {{"fit_seconds", rep.fit_seconds},
                                   {"sample_seconds", ens.wall_seconds},
                                   {"total_seconds", rep.total_seconds},
                                   {"threads", cfg.sampler.threads}});
  return rep;
}

// ---------------------------------------------------------------------------
// Reproduction experiments. Each synthesises its data into the output
// directory, writes a model config referring to those files, then runs it.

namespace detail {

inline double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

inline std::mt19937_64 data_stream(std::uint64_t seed, std::uint64_t which) { return make_stream(seed, which, 0xDA7A); }

inline void write_points(const std::filesystem::path& path, const Points& x, const Vector& y) {
  training_to_csv(path, TrainingData{x, y, 0.0});
}

inline Points column(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

}  // namespace detail

struct Experiment {
  std::string name;
  std::string description;
  std::function<json(const std::filesystem::path& out, std::uint64_t seed)> synthesize;  ///< returns the model config
};

inline double monotone_truth(double x) { return (std::atan(20.0 * x - 10.0) - std::atan(-10.0)) / 3.0; }

inline json synthesize_monotone(const std::filesystem::path& out, std::uint64_t) {
  std::vector<double> xs, ys;
  for (int i = 1; i <= 7; ++i) {
    xs.push_back(0.1 + 1.0 / (i + 1.0));
    ys.push_back(monotone_truth(xs.back()));
  }
  detail::write_points(out / "train.csv", detail::column(xs), detail::column(ys));
  const Index m = 64;
  const Points grid = tensor_grid(Vector::Zero(1), Vector::Ones(1), {m});
  Vector truth(m);
  for (Index i = 0; i < m; ++i) truth(i) = monotone_truth(grid(i, 0));
  detail::write_points(out / "truth.csv", grid, truth);
  return {
      {"kernel", {{"family", "squared_exponential"}, {"lengthscales", {0.1}}, {"variance", 0.25}}},
      {"grid", {{"lower", {0.0}}, {"upper", {1.0}}, {"counts", {m}}}},
      {"data", {{"file", "train.csv"}, {"noise_variance", 1e-10}}},
      {"test", {{"file", "truth.csv"}, {"noise_variance", 1e-10}}},
      {"likelihoods",
       {{{"type", "monotone"}, {"bandwidth", 1e-4}},
        {{"type", "bounds"}, {"bandwidth", 1e-5}, {"lower", 0.0},
         {"upper", {{"log1p", {{"a", 1.0 / 3.0}, {"b", 30.0}, {"c", 0.1}}}}}}}},
      {"sampler", {{"steps", 1000}, {"mc_samples", 5}, {"samples", 100}, {"estimator", "mc"}}}};
}

/// Damped pendulum with time normalised by the 30 s horizon.
inline json synthesize_pendulum(const std::filesystem::path& out, std::uint64_t seed) {
  constexpr double horizon = 30.0, theta0 = 1.0, damping = 0.2, noise_sd = 0.01;
  auto rng = detail::data_stream(seed, 1);
  std::vector<double> train_t(20), test_t(100);
  for (auto& t : train_t) t = detail::uniform(rng, 0.0, horizon);
  for (auto& t : test_t) t = detail::uniform(rng, 0.0, horizon);
  std::sort(train_t.begin(), train_t.end());
  std::sort(test_t.begin(), test_t.end());
  auto solve = [&](const std::vector<double>& ts) {
    return solve_damped_pendulum(theta0, 0.0, damping, detail::column(ts), 1e-3).theta;
  };
  Vector y_train = solve(train_t);
  const Matrix noise = standard_normal(y_train.size(), 1, rng);
  y_train += noise_sd * noise.col(0);
  const Vector y_test = solve(test_t);
  detail::write_points(out / "train.csv", detail::column(train_t) / horizon, y_train);
  detail::write_points(out / "test.csv", detail::column(test_t) / horizon, y_test);
  return {
      {"kernel", {{"family", "squared_exponential"}, {"lengthscales", {0.05}}, {"variance", 1.0},
                  {"mean", {{"kind", "affine"}, {"offset", 0.0}, {"slope", 0.0}}}}},
      {"grid", {{"lower", {0.0}}, {"upper", {1.0}}, {"counts", {125}}}},
      {"data", {{"file", "train.csv"}, {"noise_variance", noise_sd * noise_sd}}},
      {"test", {{"file", "test.csv"}, {"noise_variance", noise_sd * noise_sd}}},
      {"fit", {{"lengthscales", {{0.005, 1.0}}}, {"variance", {0.01, 10.0}},
               {"mean", {{-2.0, 2.0}, {-2.0, 2.0}}}, {"random_starts", 4}}},
      {"likelihoods", {{{"type", "pendulum"}, {"time_span", horizon}, {"damping", damping}, {"sigma", 1e-10}}}},
      {"sampler", {{"steps", 1000}, {"mc_samples", 5}, {"samples", 1000}, {"estimator", "mc"}}}};
}

inline json synthesize_allen_cahn(const std::filesystem::path& out, std::uint64_t seed) {
  const AllenCahnSolution truth(2048, 1e-5, 1e-3, 1.0);
  auto rng = detail::data_stream(seed, 2);
  auto draw = [&](Index n, double t_lo, double t_hi) {
    Points x(n, 2);
    Vector y(n);
    for (Index i = 0; i < n; ++i) {
      x(i, 0) = detail::uniform(rng, -1.0, 1.0);
      x(i, 1) = detail::uniform(rng, t_lo, t_hi);
      y(i) = truth(x(i, 0), x(i, 1));
    }
    return std::make_pair(x, y);
  };
  const auto [x_train, y_train] = draw(256, 0.0, 0.28);
  auto [x_test, y_test] = draw(1000, 0.28, 1.0);
  detail::write_points(out / "train.csv", x_train, y_train);
  detail::write_points(out / "test.csv", x_test, y_test);
  return {
      {"kernel", {{"family", "squared_exponential"}, {"lengthscales", {0.2, 0.2}}, {"variance", 1.0}}},
      {"grid", {{"lower", {-1.0, 0.0}}, {"upper", {1.0, 1.0}}, {"counts", {50, 20}}}},
      {"data", {{"file", "train.csv"}, {"noise_variance", 1e-10}}},
      {"test", {{"file", "test.csv"}, {"noise_variance", 1e-10}}},
      {"fit", {{"lengthscales", {{0.01, 2.0}, {0.01, 2.0}}}, {"variance", {0.01, 10.0}}}},
      {"likelihoods",
       {{{"type", "allen_cahn"}, {"eps", 1e-5}, {"sigma", 1e-5}},
        {{"type", "boundary"}, {"kind", "symmetric_periodic"}, {"sigma", 1e-5}}}},
      {"sampler", {{"steps", 1000}, {"mc_samples", 5}, {"samples", 10}, {"estimator", "mc"}}}};
}

/// Kernel inputs are normalised: x in [0, 1] maps to the physical -1 + 2x, so the
/// initial profile -sin(pi (2x - 1)) is -sin(pi x_phys). Finite differences use
/// the physical spacings 2/(H-1) and 1/(W-1).
inline json synthesize_burgers(const std::filesystem::path& out, std::uint64_t seed, bool dense) {
  const double nu = 0.02;
  const Index n = dense ? 100 : 5;
  const double noise_var = dense ? 1e-12 : 1e-4;
  auto rng = detail::data_stream(seed, dense ? 4 : 3);
  Points x(n, 2);
  Vector y(n);
  for (Index i = 0; i < n; ++i) {
    x(i, 0) = static_cast<double>(i + 1) / static_cast<double>(n + 1);
    x(i, 1) = 0.0;
    y(i) = -std::sin(std::numbers::pi * (2.0 * x(i, 0) - 1.0));
  }
  y += std::sqrt(noise_var) * standard_normal(n, 1, rng).col(0);
  detail::write_points(out / "train.csv", x, y);

  const Index h = 50, w = 20;
  const std::vector<double> snapshots{0.2, 0.5, 0.8};
  Points xt(h * static_cast<Index>(snapshots.size()), 2);
  Vector yt(xt.rows());
  Index r = 0;
  for (double t : snapshots)
    for (Index i = 0; i < h; ++i, ++r) {
      xt(r, 0) = static_cast<double>(i) / static_cast<double>(h - 1);
      xt(r, 1) = t;
      yt(r) = burgers_exact(2.0 * xt(r, 0) - 1.0, t, nu);
    }
  detail::write_points(out / "test.csv", xt, yt);
  return {
      {"kernel", {{"family", "squared_exponential"}, {"lengthscales", {0.025, 0.3}}, {"variance", 1.0}}},
      {"grid", {{"lower", {0.0, 0.0}}, {"upper", {1.0, 1.0}}, {"counts", {h, w}}}},
      {"data", {{"file", "train.csv"}, {"noise_variance", noise_var}}},
      {"test", {{"file", "test.csv"}, {"noise_variance", noise_var}}},
      {"likelihoods",
       {{{"type", "burgers"}, {"nu", nu}, {"sigma", 1e-5}},
        {{"type", "boundary"}, {"kind", "dirichlet_zero"}, {"sigma", 1e-6}}}},
      {"sampler", {{"steps", 10000}, {"mc_samples", 5}, {"samples", 100}, {"estimator", "mc"}}}};
}

/// A synthetic expert: per-day histograms over unit-half bins on [0, 10] whose
/// centre rises from 1.5 to 5.5, weak anchors on the first two days, and bounds.
inline json synthesize_histogram_demo(const std::filesystem::path& out, std::uint64_t) {
  const Index m = 50;
  const double width = 0.5;
  json h;
  h["bandwidth"] = 0.5;
  h["locations"] = json::array();
  for (Index j = 0; j < m; ++j) {
    const double centre = 1.5 + 4.0 * static_cast<double>(j) / static_cast<double>(m - 1);
    const double spread = 0.4 + 0.6 * static_cast<double>(j) / static_cast<double>(m - 1);
    std::vector<double> edges, masses;
    for (int k = 0; k <= 20; ++k) edges.push_back(width * k);
    double total = 0.0;
    for (int k = 0; k < 20; ++k) {
      const double p = normal_cdf((edges[k + 1] - centre) / spread) - normal_cdf((edges[k] - centre) / spread);
      masses.push_back(p);
      total += p;
    }
    for (auto& p : masses) p /= total;
    h["locations"].push_back({{"index", j}, {"edges", edges}, {"masses", masses}});
  }
  write_json(out / "histogram.json", h);
  detail::write_points(out / "train.csv", detail::column({1.0 / 50.0, 2.0 / 50.0}), detail::column({1.5, 1.6}));
  return {
      {"kernel", {{"family", "squared_exponential"}, {"lengthscales", {5.0 / 50.0}}, {"variance", 2.0}}},
      {"grid", {{"lower", {1.0 / 50.0}}, {"upper", {1.0}}, {"counts", {m}}}},
      {"data", {{"file", "train.csv"}, {"noise_variance", 0.25}}},
      {"likelihoods",
       {{{"type", "histogram"}, {"file", "histogram.json"}, {"bandwidth", 0.5}},
        {{"type", "bounds"}, {"bandwidth", 1e-2}, {"lower", 0.0}, {"upper", 10.0}}}},
      {"sampler", {{"steps", 1000}, {"mc_samples", 1}, {"samples", 100}, {"estimator", "mc"}}}};
}

inline const std::vector<Experiment>& experiments() {
  static const std::vector<Experiment> list{
      {"monotone", "monotone and bounded regression from 7 noiseless points", synthesize_monotone},
      {"pendulum", "damped pendulum ODE constraint", synthesize_pendulum},
      {"allen-cahn", "Allen-Cahn PDE with periodic boundaries", synthesize_allen_cahn},
      {"burgers", "viscous Burgers, 5 noisy initial-condition points",
       [](const std::filesystem::path& o, std::uint64_t s) { return synthesize_burgers(o, s, false); }},
      {"burgers-dense", "viscous Burgers, 100 near-noiseless initial-condition points",
       [](const std::filesystem::path& o, std::uint64_t s) { return synthesize_burgers(o, s, true); }},
      {"histogram-demo", "GP times a smoothed histogram expert with bounds", synthesize_histogram_demo},
  };
  return list;
}

inline const Experiment& find_experiment(const std::string& name) {
  for (const auto& e : experiments())
    if (e.name == name) return e;
  std::string known;
  for (const auto& e : experiments()) known += (known.empty() ? "" : ", ") + e.name;
  throw ConfigError("unknown experiment '" + name + "' (known: " + known + ")");
}

/// Synthesises data for `name`, writes model.json next to it and runs the model.
inline RunReport reproduce(const std::string& name, const RunOptions& opt, const std::filesystem::path& out) {
  const Experiment& e = find_experiment(name);
  const std::uint64_t seed = opt.seed.value_or(0);
  std::filesystem::create_directories(out);
  json model = e.synthesize(out, seed);
  model["sampler"]["seed"] = seed;
  if (model.contains("fit")) model["fit"]["seed"] = seed;
  write_json(out / "model.json", model);
  const ModelConfig cfg = model_from_json(model, out);
  const json provenance = {{"experiment", e.name},
                           {"description", e.description},
                           {"data_seed", seed},
                           {"model_config", "model.json"}};
  return run_model(cfg, opt, out, provenance);
}

}  // namespace flowgp
