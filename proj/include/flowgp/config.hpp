#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "flowgp/fit.hpp"
#include "flowgp/io.hpp"
#include "flowgp/kernel.hpp"
#include "flowgp/likelihoods.hpp"
#include "flowgp/sampler.hpp"

namespace flowgp {

// ---------------------------------------------------------------------------
// Kernel

inline json kernel_to_json(const KernelSpec& k) {
  json j;
  j["family"] = std::string(to_string(k.family));
  j["lengthscales"] = std::vector<double>(k.lengthscales.data(), k.lengthscales.data() + k.lengthscales.size());
  j["variance"] = k.variance;
  if (k.uses_period()) j["period"] = k.period;
  switch (k.mean.kind) {
    case MeanFunction::Kind::Zero: j["mean"] = {{"kind", "zero"}}; break;
    case MeanFunction::Kind::Constant: j["mean"] = {{"kind", "constant"}, {"offset", k.mean.offset}}; break;
    case MeanFunction::Kind::Affine:
      j["mean"] = {{"kind", "affine"}, {"offset", k.mean.offset}, {"slope", k.mean.slope}};
      break;
  }
  return j;
}

inline Vector vector_from_json(const json& j) {
  if (j.is_number()) return Vector::Constant(1, j.get<double>());
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

inline KernelSpec kernel_from_json(const json& j) {
  KernelSpec k;
  k.family = kernel_family_from_string(j.value("family", std::string("squared_exponential")));
  if (j.contains("lengthscales")) k.lengthscales = vector_from_json(j["lengthscales"]);
  k.variance = j.value("variance", 1.0);
  k.period = j.value("period", 1.0);
  if (j.contains("mean")) {
    const auto& m = j["mean"];
    const std::string kind = m.value("kind", std::string("zero"));
    if (kind == "zero") k.mean = MeanFunction::zero();
    else if (kind == "constant") k.mean = MeanFunction::constant(m.value("offset", 0.0));
    else if (kind == "affine") k.mean = MeanFunction::affine(m.value("offset", 0.0), m.value("slope", 0.0));
    else throw ConfigError("unknown mean kind '" + kind + "'");
  }
  k.validate();
  return k;
}

// ---------------------------------------------------------------------------
// Sampler

inline json sampler_to_json(const SamplerConfig& c) {
  return {{"whitened", c.whitened},
          {"steps", c.steps},
          {"t_min", c.t_min},
          {"beta0", c.schedule.beta0},
          {"beta1", c.schedule.beta1},
          {"estimator", std::string(to_string(c.guidance.estimator))},
          {"mc_samples", c.guidance.samples},
          {"clip_tau", c.guidance.clip_tau},
          {"clip", c.clip},
          {"reparam_seed", c.guidance.reparam_seed},
          {"seed", c.seed},
          {"samples", c.samples},
          {"integrator", std::string(to_string(c.integrator))},
          {"block", c.block}};
}

/// Fields present in `j` override `base`.
inline SamplerConfig sampler_from_json(const json& j, SamplerConfig c = {}) {
  c.whitened = j.value("whitened", c.whitened);
  c.steps = j.value("steps", c.steps);
  c.t_min = j.value("t_min", c.t_min);
  c.schedule.beta0 = j.value("beta0", c.schedule.beta0);
  c.schedule.beta1 = j.value("beta1", c.schedule.beta1);
  if (j.contains("estimator")) c.guidance.estimator = estimator_from_string(j["estimator"].get<std::string>());
  c.guidance.samples = j.value("mc_samples", c.guidance.samples);
  c.guidance.clip_tau = j.value("clip_tau", c.guidance.clip_tau);
  c.clip = j.value("clip", c.clip);
  c.guidance.reparam_seed = j.value("reparam_seed", c.guidance.reparam_seed);
  c.seed = j.value("seed", c.seed);
  c.samples = j.value("samples", c.samples);
  if (j.contains("integrator")) c.integrator = integrator_from_string(j["integrator"].get<std::string>());
  c.threads = j.value("threads", c.threads);
  c.block = j.value("block", c.block);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Hyperparameter search

inline Bounds bounds_from_json(const json& j) {
  if (j.is_number()) return Bounds::fixed(j.get<double>());
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 2) throw ConfigError("bounds must be [lower, upper] or a fixed number");
  return {v[0], v[1]};
}

inline HyperparameterSearch search_from_json(const json& j, const KernelSpec& tmpl) {
  HyperparameterSearch s;
  if (j.contains("lengthscales"))
    for (const auto& b : j["lengthscales"]) s.lengthscales.push_back(bounds_from_json(b));
  else
    for (Index i = 0; i < tmpl.lengthscales.size(); ++i) s.lengthscales.push_back(Bounds::fixed(tmpl.lengthscales(i)));
  s.variance = j.contains("variance") ? bounds_from_json(j["variance"]) : Bounds::fixed(tmpl.variance);
  if (tmpl.uses_period()) s.period = j.contains("period") ? bounds_from_json(j["period"]) : Bounds::fixed(tmpl.period);
  const Index mp = tmpl.mean.parameter_count();
  if (j.contains("mean")) {
    for (const auto& b : j["mean"]) s.mean.push_back(bounds_from_json(b));
  } else {
    if (mp >= 1) s.mean.push_back(Bounds::fixed(tmpl.mean.offset));
    if (mp >= 2) s.mean.push_back(Bounds::fixed(tmpl.mean.slope));
  }
  s.grid_points = j.value("grid_points", s.grid_points);
  s.max_grid_evaluations = j.value("max_grid_evaluations", s.max_grid_evaluations);
  s.starts = j.value("starts", s.starts);
  s.random_starts = j.value("random_starts", s.random_starts);
  s.seed = j.value("seed", s.seed);
  s.refine = j.value("refine", s.refine);
  s.max_iterations = j.value("max_iterations", s.max_iterations);
  return s;
}

inline json search_to_json(const HyperparameterSearch& s) {
  auto b = [](const Bounds& x) { return json::array({x.lower, x.upper}); };
  json j;
  j["lengthscales"] = json::array();
  for (const auto& x : s.lengthscales) j["lengthscales"].push_back(b(x));
  j["variance"] = b(s.variance);
  if (s.period) j["period"] = b(*s.period);
  j["mean"] = json::array();
  for (const auto& x : s.mean) j["mean"].push_back(b(x));
  j["grid_points"] = s.grid_points;
  j["max_grid_evaluations"] = s.max_grid_evaluations;
  j["starts"] = s.starts;
  j["random_starts"] = s.random_starts;
  j["seed"] = s.seed;
  j["refine"] = s.refine;
  j["max_iterations"] = s.max_iterations;
  return j;
}

// ---------------------------------------------------------------------------
// Model configuration: kernel, prediction grid, training data, conditions, sampler.

struct GridSpec {
  Vector lower;
  Vector upper;
  std::vector<Index> counts;

  Points points() const { return tensor_grid(lower, upper, counts); }
  Index size() const {
    Index n = 1;
    for (Index c : counts) n *= c;
    return n;
  }
};

inline GridSpec grid_from_json(const json& j) {
  GridSpec g;
  g.lower = vector_from_json(j.at("lower"));
  g.upper = vector_from_json(j.at("upper"));
  for (const auto& c : j.at("counts")) g.counts.push_back(c.get<Index>());
  if (g.lower.size() != g.upper.size() || static_cast<Index>(g.counts.size()) != g.lower.size())
    throw ConfigError("grid: lower, upper and counts must have the same length");
  return g;
}

inline json grid_to_json(const GridSpec& g) {
  return {{"lower", std::vector<double>(g.lower.data(), g.lower.data() + g.lower.size())},
          {"upper", std::vector<double>(g.upper.data(), g.upper.data() + g.upper.size())},
          {"counts", g.counts}};
}

/// Training data CSV: input columns followed by a target column named "y".
inline TrainingData training_from_csv(const std::filesystem::path& path, double noise_variance) {
  const CsvTable t = read_csv(path);
  const Index yc = t.column("y");
  TrainingData d;
  d.targets = t.values.col(yc);
  d.inputs.resize(t.values.rows(), t.values.cols() - 1);
  Index out = 0;
  for (Index c = 0; c < t.values.cols(); ++c)
    if (c != yc) d.inputs.col(out++) = t.values.col(c);
  d.noise_variance = noise_variance;
  return d;
}

inline void training_to_csv(const std::filesystem::path& path, const TrainingData& d) {
  std::vector<std::string> header;
  const char* names[] = {"x", "t"};
  for (Index c = 0; c < d.inputs.cols(); ++c)
    header.push_back(c < 2 ? std::string(names[c]) : "x" + std::to_string(c));
  header.push_back("y");
  Matrix rows(d.inputs.rows(), d.inputs.cols() + 1);
  rows << d.inputs, d.targets;
  write_csv(path, header, rows);
}

/// Per-grid-point bound profile: a number, an array, or {"log1p": {"a","b","c"}} meaning a log(b x + 1) + c.
inline Vector profile_from_json(const json& j, const Points& grid) {
  const Index m = grid.rows();
  if (j.is_number()) return Vector::Constant(m, j.get<double>());
  if (j.is_array()) {
    Vector v = vector_from_json(j);
    if (v.size() != m) throw ConfigError("bound profile has " + std::to_string(v.size()) + " values for " + std::to_string(m) + " grid points");
    return v;
  }
  if (j.contains("log1p")) {
    const auto& p = j["log1p"];
    const double a = p.at("a").get<double>(), b = p.at("b").get<double>(), c = p.value("c", 0.0);
    return (a * (b * grid.col(0).array()).log1p() + c).matrix();
  }
  throw ConfigError("unrecognised bound profile");
}

inline GridField2D field_from_json(const json& j, const GridSpec& g) {
  if (g.counts.size() != 2) throw ConfigError("PDE conditions need a two-dimensional grid");
  GridField2D f = GridField2D::unit_domain(g.counts[0], g.counts[1]);
  f.dx = j.value("dx", f.dx);
  f.dt = j.value("dt", f.dt);
  f.validate();
  return f;
}

/// Builds one conditioning term from its JSON description.
inline LikelihoodPtr likelihood_from_json(const json& j, const GridSpec& g, const std::filesystem::path& base_dir) {
  const std::string type = j.at("type").get<std::string>();
  const Points grid = g.points();
  const Index m = grid.rows();
  if (type == "constant") return std::make_shared<ConstantLikelihood>(m);
  if (type == "monotone") {
    if (g.counts.size() != 1) throw ConfigError("monotone condition needs a one-dimensional grid");
    const double dx = (g.upper(0) - g.lower(0)) / static_cast<double>(m - 1);
    return ProbitInequality::monotone(m, j.value("dx", dx), j.at("bandwidth").get<double>());
  }
  if (type == "bounds")
    return ProbitInequality::bounds(profile_from_json(j.at("lower"), grid), profile_from_json(j.at("upper"), grid),
                                    j.at("bandwidth").get<double>());
  if (type == "pendulum") {
    const double span = j.value("time_span", g.upper(0) - g.lower(0));
    const auto op = std::make_shared<PendulumResidual>(m, span / static_cast<double>(m - 1), j.value("damping", 0.2));
    return std::make_shared<GaussianResidual>(op, j.at("sigma").get<double>());
  }
  if (type == "allen_cahn")
    return std::make_shared<GaussianResidual>(std::make_shared<AllenCahnResidual>(field_from_json(j, g), j.value("eps", 1e-5)),
                                              j.at("sigma").get<double>());
  if (type == "burgers")
    return std::make_shared<GaussianResidual>(std::make_shared<BurgersResidual>(field_from_json(j, g), j.value("nu", 0.02)),
                                              j.at("sigma").get<double>());
  if (type == "boundary") {
    const std::string kind = j.at("kind").get<std::string>();
    BoundaryKind k;
    if (kind == "dirichlet_zero") k = BoundaryKind::DirichletZero;
    else if (kind == "symmetric_periodic") k = BoundaryKind::SymmetricPeriodic;
    else throw ConfigError("unknown boundary kind '" + kind + "'");
    return std::make_shared<GaussianResidual>(std::make_shared<BoundaryResidual>(field_from_json(j, g), k),
                                              j.at("sigma").get<double>());
  }
  if (type == "histogram") {
    const json h = j.contains("file") ? read_json(base_dir / j["file"].get<std::string>()) : j;
    return histogram_from_json(h, grid, j.value("bandwidth", 0.5));
  }
  if (type == "linear_observations") {
    const auto idx = j.at("indices").get<std::vector<Index>>();
    const Vector vals = vector_from_json(j.at("values"));
    if (static_cast<Index>(idx.size()) != vals.size()) throw ConfigError("linear_observations: indices/values size");
    std::vector<Triplet> t;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] < 0 || idx[i] >= m) throw ConfigError("linear_observations: index out of range");
      t.emplace_back(static_cast<int>(i), static_cast<int>(idx[i]), 1.0);
    }
    SparseMatrix sel(static_cast<Index>(idx.size()), m);
    sel.setFromTriplets(t.begin(), t.end());
    return std::make_shared<GaussianResidual>(std::make_shared<LinearResidual>(sel, vals), j.at("sigma").get<double>());
  }
  throw ConfigError("unknown likelihood type '" + type + "'");
}

inline LikelihoodPtr combine_likelihoods(std::vector<LikelihoodPtr> terms, Index m) {
  if (terms.empty()) return std::make_shared<ConstantLikelihood>(m);
  if (terms.size() == 1) return terms.front();
  return std::make_shared<ProductLikelihood>(std::move(terms));
}

struct ModelConfig {
  KernelSpec kernel;
  GridSpec grid;
  std::optional<TrainingData> data;
  std::optional<TrainingData> test;  ///< held-out points for RMSE / NLPD
  json likelihoods = json::array();
  std::optional<HyperparameterSearch> fit;
  SamplerConfig sampler;
  std::filesystem::path base_dir;
  json source;  ///< the document this config was read from

  LikelihoodPtr build_likelihood() const {
    std::vector<LikelihoodPtr> terms;
    for (const auto& l : likelihoods) terms.push_back(likelihood_from_json(l, grid, base_dir));
    return combine_likelihoods(std::move(terms), grid.size());
  }
};

/// {"kernel": {...}, "grid": {...}, "data": {"file", "noise_variance"}, "test": {"file", "noise_variance"},
///  "likelihoods": [...], "fit": {...}, "sampler": {...}}; relative file names resolve against the
/// config's directory.
inline ModelConfig model_from_json(const json& j, const std::filesystem::path& base_dir) {
  ModelConfig c;
  c.base_dir = base_dir;
  c.source = j;
  c.kernel = kernel_from_json(j.at("kernel"));
  c.grid = grid_from_json(j.at("grid"));
  if (c.grid.lower.size() != c.kernel.input_dim()) throw ConfigError("grid dimension does not match the kernel");
  if (j.contains("data")) {
    const auto& d = j["data"];
    c.data = training_from_csv(base_dir / d.at("file").get<std::string>(), d.value("noise_variance", 0.0));
  }
  if (j.contains("test")) {
    const auto& d = j["test"];
    c.test = training_from_csv(base_dir / d.at("file").get<std::string>(), d.value("noise_variance", 0.0));
  }
  if (j.contains("likelihoods")) c.likelihoods = j["likelihoods"];
  if (j.contains("fit")) c.fit = search_from_json(j["fit"], c.kernel);
  if (j.contains("sampler")) c.sampler = sampler_from_json(j["sampler"]);
  return c;
}

inline ModelConfig load_model_config(const std::filesystem::path& path) {
  return model_from_json(read_json(path), path.parent_path());
}

}  // namespace flowgp
