// Command-line front end: fit, sample, diagnose, evaluate, reproduce.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "flowgp/flowgp.hpp"

namespace fs = std::filesystem;
using namespace flowgp;

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<Index> steps, samples, mc_samples;
  std::optional<std::string> estimator, whitened;
  std::optional<double> t_min, clip_tau;
  std::optional<int> threads;

  RunOptions resolve() const {
    RunOptions o;
    o.seed = seed;
    o.steps = steps;
    o.samples = samples;
    o.mc_samples = mc_samples;
    if (estimator) o.estimator = estimator_from_string(*estimator);
    if (whitened) o.whitened = *whitened == "on";
    o.t_min = t_min;
    o.clip_tau = clip_tau;
    o.threads = threads;
    return o;
  }
};

void add_sampler_flags(CLI::App* app, Overrides& o) {
  app->add_option("--seed", o.seed, "master seed");
  app->add_option("--steps", o.steps, "ODE steps T")->check(CLI::PositiveNumber);
  app->add_option("--samples", o.samples, "ensemble size")->check(CLI::PositiveNumber);
  app->add_option("--mc-samples", o.mc_samples, "bridge samples S per step")->check(CLI::PositiveNumber);
  app->add_option("--estimator", o.estimator, "guidance estimator")->check(CLI::IsMember({"mc", "fisher", "dps", "mpgd"}));
  app->add_option("--whitened", o.whitened, "whitened coordinates")->check(CLI::IsMember({"on", "off"}));
  app->add_option("--t-min", o.t_min, "final ODE time");
  app->add_option("--clip-tau", o.clip_tau, "smooth clipping radius");
  app->add_option("--threads", o.threads, "worker threads (results do not depend on it)")->check(CLI::PositiveNumber);
}

void print_summary(const RunReport& r, const fs::path& out) {
  const json& m = r.summary["metrics"];
  std::cout << "wrote " << out.string() << ": " << r.ensemble.size() << " samples, min ESS "
            << r.summary["ess"]["min"].get<double>() << ", mean ESS " << r.summary["ess"]["mean"].get<double>();
  if (m.contains("rmse")) std::cout << ", RMSE " << m["rmse"].get<double>() << ", NLPD " << m["nlpd"].get<double>();
  if (m.contains("all_constraints_fraction"))
    std::cout << ", constraints satisfied " << m["all_constraints_fraction"].get<double>();
  std::cout << ", " << r.total_seconds << " s\n";
  for (const auto& w : r.ensemble.warnings) std::cerr << "warning: " << w << '\n';
}

int cmd_fit(const fs::path& config, const std::optional<std::uint64_t>& seed, const fs::path& out) {
  ModelConfig cfg = load_model_config(config);
  if (!cfg.data) throw ConfigError("fit: config has no training data");
  if (!cfg.fit) throw ConfigError("fit: config has no 'fit' block with hyperparameter bounds");
  HyperparameterSearch search = *cfg.fit;
  if (seed) search.seed = *seed;
  const FitResult r = fit_hyperparameters(cfg.kernel, *cfg.data, search);
  const json j = {{"kernel", kernel_to_json(r.spec)},
                  {"log_marginal", r.log_marginal},
                  {"best_grid_log_marginal", r.best_grid_log_marginal},
                  {"evaluations", r.evaluations},
                  {"search", search_to_json(search)}};
  write_json(out / "fit.json", j);
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_diagnose(const fs::path& config, Index points, const fs::path& out) {
  const ModelConfig cfg = load_model_config(config);
  const PreparedModel model = prepare_model(cfg);
  const FlowOperator flow(model.posterior, cfg.sampler.schedule);
  std::vector<double> times(static_cast<std::size_t>(points));
  for (Index i = 0; i < points; ++i) times[static_cast<std::size_t>(i)] = static_cast<double>(i) / static_cast<double>(points - 1);
  const StiffnessProfile p = stiffness_profile(flow, times);
  Matrix rows(points, 4);
  for (Index i = 0; i < points; ++i) {
    const auto k = static_cast<std::size_t>(i);
    rows.row(i) << p.times[k], p.stiffness[k], p.a_min[k], p.a_max[k];
  }
  write_csv(out / "stiffness.csv", {"t", "stiffness", "a_min", "a_max"}, rows);
  const Vector& lam = flow.eigenvalues();
  json j = {{"dim", flow.dim()},
            {"condition_number", condition_number(model.posterior.cov)},
            {"eigenvalue_min", lam.minCoeff()},
            {"eigenvalue_max", lam.maxCoeff()},
            {"stiffness_at_0", p.at_start()},
            {"isotropic", p.isotropic},
            {"theorem_regime", p.theorem_regime},
            {"transport_bound", transport_bound(flow)},
            {"notes", p.notes}};
  const bool stiff = std::isfinite(p.at_start()) && p.at_start() > 1e6;
  j["recommend_whitening"] = stiff;
  write_json(out / "diagnostics.json", j);
  std::cout << j.dump(2) << '\n';
  if (stiff)
    std::cerr << "warning: stiffness at t=0 is " << p.at_start()
              << " (> 1e6); sample in whitened coordinates (--whitened on)\n";
  return 0;
}

int cmd_evaluate(const fs::path& config, const fs::path& ensemble, const std::optional<fs::path>& test_file,
                 std::optional<double> noise_variance, const std::optional<fs::path>& out) {
  const ModelConfig cfg = load_model_config(config);
  std::optional<TrainingData> test = cfg.test;
  if (test_file) test = training_from_csv(*test_file, noise_variance.value_or(test ? test->noise_variance : 0.0));
  if (!test) throw ConfigError("evaluate: no test set (give --test or a 'test' block in the config)");
  if (noise_variance) test->noise_variance = *noise_variance;
  const EnsembleFile e = read_ensemble_csv(ensemble);
  const PreparedModel model = prepare_model(cfg);
  if (e.samples.cols() != model.grid.rows()) throw DimensionError("evaluate: ensemble does not match the config grid");
  const auto ev = evaluate_on_test(e.samples, model.gp, model.grid, *test);
  const json j = {{"rmse", ev.rmse}, {"nlpd", ev.nlpd}, {"test_points", test->size()}, {"samples", e.samples.rows()}};
  if (out) {
    write_json(*out / "evaluation.json", j);
    write_csv(*out / "predictions.csv", prediction_header(test->inputs.cols()), ev.predictions);
  }
  std::cout << j.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian-process sampling under non-linear conditioning by a guided probability-flow ODE"};
  app.require_subcommand(1);

  fs::path config, out = ".";
  Overrides ov;

  auto* fit = app.add_subcommand("fit", "fit kernel hyperparameters by marginal likelihood");
  fit->add_option("--config", config, "model config (JSON)")->required()->check(CLI::ExistingFile);
  fit->add_option("--seed", ov.seed, "seed for random restarts");
  fit->add_option("--out", out, "output directory");

  auto* sample = app.add_subcommand("sample", "draw a conditioned ensemble for a model config");
  sample->add_option("--config", config, "model config (JSON)")->required()->check(CLI::ExistingFile);
  sample->add_option("--out", out, "output directory");
  add_sampler_flags(sample, ov);

  Index points = 201;
  auto* diagnose = app.add_subcommand("diagnose", "stiffness profile and transport bound of the posterior flow");
  diagnose->add_option("--config", config, "model config (JSON)")->required()->check(CLI::ExistingFile);
  diagnose->add_option("--points", points, "uniform time points on [0, 1]")->check(CLI::Range(2, 1000000));
  diagnose->add_option("--out", out, "output directory");

  fs::path ensemble;
  std::optional<fs::path> test_file, eval_out;
  std::optional<double> noise_variance;
  auto* evaluate = app.add_subcommand("evaluate", "RMSE and NLPD of an ensemble on test points");
  evaluate->add_option("--config", config, "model config the ensemble was drawn from")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--ensemble", ensemble, "ensemble CSV")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--test", test_file, "test CSV (input columns and y)")->check(CLI::ExistingFile);
  evaluate->add_option("--noise-variance", noise_variance, "observation noise added to predictive variances");
  evaluate->add_option("--out", eval_out, "write evaluation.json and predictions.csv here");

  std::string experiment;
  bool list = false;
  std::optional<fs::path> repro_out;
  auto* reproduce_cmd = app.add_subcommand("reproduce", "synthesise data and run a named experiment end to end");
  reproduce_cmd->add_option("experiment", experiment, "experiment name");
  reproduce_cmd->add_flag("--list", list, "list experiments");
  reproduce_cmd->add_option("--out", repro_out, "output directory (default runs/<experiment>)");
  add_sampler_flags(reproduce_cmd, ov);

  CLI11_PARSE(app, argc, argv);

  try {
    if (fit->parsed()) return cmd_fit(config, ov.seed, out);
    if (sample->parsed()) {
      const RunReport r = run_model(load_model_config(config), ov.resolve(), out, {{"config_file", config.string()}});
      print_summary(r, out);
      return 0;
    }
    if (diagnose->parsed()) return cmd_diagnose(config, points, out);
    if (evaluate->parsed()) return cmd_evaluate(config, ensemble, test_file, noise_variance, eval_out);
    if (reproduce_cmd->parsed()) {
      if (list) {
        for (const auto& e : experiments()) std::cout << e.name << "\t" << e.description << '\n';
        return 0;
      }
      if (experiment.empty()) throw ConfigError("reproduce: name an experiment (see --list)");
      const fs::path dir = repro_out.value_or(fs::path("runs") / experiment);
      const RunReport r = reproduce(experiment, ov.resolve(), dir);
      print_summary(r, dir);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
