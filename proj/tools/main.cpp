// Command-line front end: one subcommand per library operation.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
// Errors are also written to stderr as one JSON object.

#include "ewa/ewa.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace ewa;

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct Globals {
  std::uint64_t seed = 0;
  std::string out;
  std::string format;
  bool csv = false;
  bool json = false;
  bool quiet = false;
};

struct ProblemInputs {
  std::string problem;
  std::string design;
  std::string response;
  bool header = false;
  std::optional<double> sigma;
  std::optional<double> lambda;
  std::optional<double> tau;

  void attach(CLI::App* cmd) {
    auto* p = cmd->add_option("--problem", problem, "Problem JSON {design, response, sigma?, lambda?, tau?}");
    auto* d = cmd->add_option("--design", design, "Design matrix CSV (n rows, p columns)");
    auto* r = cmd->add_option("--response", response, "Response CSV (n values)");
    p->excludes(d)->excludes(r);
    d->needs(r);
    r->needs(d);
    cmd->add_flag("--header", header, "Skip one header line in CSV inputs");
    cmd->add_option("--sigma", sigma, "Noise level (default 1)");
    cmd->add_option("--lambda", lambda, "Penalty level (default: calibrated at delta = 0.05)");
    cmd->add_option("--tau", tau, "Temperature (default sigma^2 / n)");
  }

  TuningOverrides overrides() const { return {sigma, lambda, tau}; }

  RegressionProblem load() const {
    if (!problem.empty()) return load_problem_json(problem, overrides());
    if (design.empty()) throw InvalidArgument("need --problem or --design/--response");
    return load_problem_csv(design, response, header, overrides());
  }
};

struct TraceInputs {
  std::string problem;
  std::optional<double> sigma;
  std::optional<double> lambda;
  std::optional<double> tau;

  void attach(CLI::App* cmd) {
    cmd->add_option("--problem", problem, "Trace problem JSON {shape, tensor, response, sigma?, lambda?, tau?}")
        ->required();
    cmd->add_option("--sigma", sigma, "Noise level (default 1)");
    cmd->add_option("--lambda", lambda, "Penalty level (default: calibrated at delta = 0.05)");
    cmd->add_option("--tau", tau, "Temperature (default sigma^2 / (n m1 m2))");
  }

  TraceProblem load() const { return load_trace_problem_json(problem, {sigma, lambda, tau}); }
};

struct SamplerInputs {
  Index samples = 5000;
  Index burn_in = 500;
  Index thinning = 1;
  double step = 0.0;
  double gamma = 0.0;
  std::string kind = "gibbs";
  std::string draws;

  void attach(CLI::App* cmd) {
    cmd->add_option("--samples", samples, "Retained draws")->capture_default_str();
    cmd->add_option("--burn-in", burn_in, "Discarded initial iterations")->capture_default_str();
    cmd->add_option("--thin", thinning, "Keep every k-th draw")->capture_default_str();
    cmd->add_option("--sampler", kind, "gibbs or myula")->check(CLI::IsMember({"gibbs", "myula"}))->capture_default_str();
    cmd->add_option("--step", step, "Langevin step size (myula; 0 = automatic)");
    cmd->add_option("--gamma", gamma, "Moreau-Yosida parameter (myula; 0 = automatic)");
    cmd->add_option("--draws", draws, "Write every retained draw to this CSV, one per row");
  }

  SamplerConfig config(std::uint64_t seed) const {
    SamplerConfig c;
    c.kind = kind == "myula" ? SamplerKind::myula : SamplerKind::gibbs;
    c.n_samples = samples;
    c.burn_in = burn_in;
    c.thinning = thinning;
    c.step_size = step;
    c.moreau_gamma = gamma;
    c.seed = seed;
    c.validate();
    return c;
  }
};

Json vector_json(const Vector& v) { return vector_to_json(v); }

std::string vector_csv(const std::string& name, const Vector& v) {
  std::string s = "index," + name + "\n";
  for (Index k = 0; k < v.size(); ++k) s += std::to_string(k) + "," + format_double(v(k)) + "\n";
  return s;
}

class Emitter {
 public:
  explicit Emitter(const Globals& g) : g_(g) {}

  bool csv(bool default_csv = false) const {
    if (g_.csv || g_.format == "csv") return true;
    if (g_.json || g_.format == "json") return false;
    return default_csv;
  }

  void emit(const std::string& text) const {
    if (g_.out.empty()) {
      std::cout << text;
      std::cout.flush();
    } else {
      write_text(g_.out, text);
    }
  }

  void emit(const Json& j) const { emit(j.dump(2) + "\n"); }

  void note(const std::string& line) const {
    if (!g_.quiet && !g_.out.empty()) std::cout << line << "\n";
  }

 private:
  const Globals& g_;
};

Json diagnostics(const SampleSet& samples) {
  double ess_min = HUGE_VAL;
  for (Index j = 0; j < samples.dim(); ++j) {
    ess_min = std::min(ess_min, effective_sample_size(samples.draws.row(j).transpose()));
  }
  return Json{{"sampler", to_string(samples.config.kind)},
              {"n_samples", samples.config.n_samples},
              {"burn_in", samples.config.burn_in},
              {"thinning", samples.config.thinning},
              {"step_size", samples.config.step_size},
              {"moreau_gamma", samples.config.moreau_gamma},
              {"min_effective_sample_size", ess_min}};
}

void write_draws(const std::string& path, const SampleSet& samples) {
  if (path.empty()) return;
  write_text(path, matrix_to_csv(samples.draws.transpose()));
}

std::vector<Index> parse_set(const std::string& text) {
  std::vector<Index> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto t = detail::trim(item);
    if (t.empty()) continue;
    Index v = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size()) throw InvalidArgument("--set: bad index '" + std::string(t) + "'");
    out.push_back(v);
  }
  return out;
}

int report_error(const char* kind, const std::string& message, int code) {
  std::cerr << Json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << "\n";
  return code;
}

int run(int argc, char** argv) {
  CLI::App app{"Exponentially weighted aggregation with the Laplace prior"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Master random seed")->capture_default_str();
  app.add_option("--out", g.out, "Output file (directory for experiment); stdout if omitted");
  auto* format = app.add_option("--format", g.format, "Output format")->check(CLI::IsMember({"csv", "json"}));
  auto* csv_flag = app.add_flag("--csv", g.csv, "Same as --format csv");
  auto* json_flag = app.add_flag("--json", g.json, "Same as --format json");
  format->excludes(csv_flag)->excludes(json_flag);
  csv_flag->excludes(json_flag);
  app.add_flag("--quiet", g.quiet, "Suppress progress lines on stdout");
  const Emitter out(g);

  // fit-lasso
  auto* lasso_cmd = app.add_subcommand("fit-lasso", "Lasso by coordinate descent");
  ProblemInputs lasso_in;
  lasso_in.attach(lasso_cmd);
  LassoOptions lasso_opt;
  lasso_cmd->add_option("--tol", lasso_opt.tol, "Duality-gap tolerance")->capture_default_str();
  lasso_cmd->add_option("--max-iter", lasso_opt.max_iter, "Maximum sweeps")->capture_default_str();
  lasso_cmd->callback([&] {
    const RegressionProblem problem = lasso_in.load();
    const LassoFit fit = fit_lasso(problem, lasso_opt);
    if (!fit.converged) throw NumericalError("lasso did not converge; gap " + format_double(fit.duality_gap));
    if (out.csv()) return out.emit(vector_csv("coefficient", fit.coefficients));
    out.emit(Json{{"coefficients", vector_json(fit.coefficients)},
                  {"active_set", fit.active_set},
                  {"iterations", fit.iterations},
                  {"converged", fit.converged},
                  {"duality_gap", fit.duality_gap},
                  {"lambda", problem.lambda()},
                  {"sure", lasso_sure(problem, fit)}});
  });

  // ewa-closed
  auto* closed_cmd = app.add_subcommand("ewa-closed", "Closed-form EWA for designs with X^T X / n = I");
  ProblemInputs closed_in;
  closed_in.attach(closed_cmd);
  closed_cmd->callback([&] {
    const RegressionProblem problem = closed_in.load();
    if (!is_orthonormal(problem)) throw DataError("ewa-closed: design is not orthonormal (X^T X / n != I)");
    const ShrinkageInputs in{problem.tau(), problem.lambda(),
                             problem.design().transpose() * problem.response() / static_cast<double>(problem.n())};
    const EwaEstimate est = ewa_closed_form(in);
    if (out.csv()) return out.emit(vector_csv("mean", est.mean));
    out.emit(Json{{"mean", vector_json(est.mean)},
                  {"cov_diag", vector_json(est.covariance.diagonal())},
                  {"h", est.h_value},
                  {"sure", ewa_sure(problem, est)},
                  {"method", to_string(est.method)}});
  });

  // ewa-sample
  auto* sample_cmd = app.add_subcommand("ewa-sample", "EWA by sampling the pseudo-posterior");
  ProblemInputs sample_in;
  sample_in.attach(sample_cmd);
  SamplerInputs sample_opt;
  sample_opt.attach(sample_cmd);
  sample_cmd->callback([&] {
    const RegressionProblem problem = sample_in.load();
    const SampleSet samples = sample_posterior(problem, sample_opt.config(g.seed));
    write_draws(sample_opt.draws, samples);
    EwaEstimate est = ewa_from_samples(samples);
    const HEstimates h = h_from_samples(problem, samples, est, Coefficients::Zero(problem.p()));
    if (out.csv()) return out.emit(vector_csv("mean", est.mean));
    out.emit(Json{{"mean", vector_json(est.mean)},
                  {"cov_diag", vector_json(est.covariance.diagonal())},
                  {"mc_std_error", vector_json(est.mc_std_error)},
                  {"h", h.definition},
                  {"h_std_error", h.definition_se},
                  {"sure", ewa_sure(problem, est)},
                  {"diagnostics", diagnostics(samples)}});
  });

  // ewa-quadrature
  auto* quad_cmd = app.add_subcommand("ewa-quadrature", "EWA by deterministic integration (p <= 3)");
  ProblemInputs quad_in;
  quad_in.attach(quad_cmd);
  QuadratureGrid grid;
  quad_cmd->add_option("--order", grid.order, "Gauss-Legendre nodes per panel")->capture_default_str();
  quad_cmd->add_option("--panels", grid.panels, "Initial panels per piece")->capture_default_str();
  quad_cmd->add_option("--tol", grid.tol, "Refinement tolerance")->capture_default_str();
  quad_cmd->callback([&] {
    const RegressionProblem problem = quad_in.load();
    const QuadratureResult r = oracle_integrate(problem, grid);
    if (out.csv()) return out.emit(vector_csv("mean", r.estimate.mean));
    out.emit(Json{{"mean", vector_json(r.estimate.mean)},
                  {"covariance", matrix_to_json(r.estimate.covariance)},
                  {"h", r.estimate.h_value},
                  {"log_normaliser", r.log_normaliser},
                  {"levels", r.levels},
                  {"nodes_per_axis", r.nodes_per_axis},
                  {"last_change", r.last_change},
                  {"converged", r.converged}});
  });

  // sure
  auto* sure_cmd = app.add_subcommand("sure", "Risk estimates for the lasso and the EWA");
  ProblemInputs sure_in;
  sure_in.attach(sure_cmd);
  SamplerInputs sure_opt;
  sure_opt.attach(sure_cmd);
  sure_cmd->callback([&] {
    const RegressionProblem problem = sure_in.load();
    const LassoFit fit = fit_lasso(problem);
    EwaEstimate est;
    std::string route;
    if (is_orthonormal(problem)) {
      est = ewa_closed_form({problem.tau(), problem.lambda(),
                             problem.design().transpose() * problem.response() / static_cast<double>(problem.n())});
      route = "closed-form";
    } else {
      est = ewa_from_samples(sample_posterior(problem, sure_opt.config(g.seed)));
      route = "sampler";
    }
    const double lasso_value = lasso_sure(problem, fit);
    const double ewa_value = ewa_sure(problem, est);
    if (out.csv()) {
      return out.emit("estimator,sure\nlasso," + format_double(lasso_value) + "\newa," + format_double(ewa_value) +
                      "\n");
    }
    out.emit(Json{{"lasso", lasso_value}, {"ewa", ewa_value}, {"ewa_route", route}});
  });

  // h-curve
  auto* h_cmd = app.add_subcommand("h-curve", "Normalised peakedness curve h(lambda_bar, z)");
  std::vector<double> lambda_bars;
  Index points = 4000;
  h_cmd->add_option("--lambda-bar", lambda_bars, "lambda / sqrt(tau); repeatable")->required();
  h_cmd->add_option("--points", points, "Grid points on [0, 2 lambda_bar]")->capture_default_str();
  h_cmd->callback([&] {
    require(points >= 2, "--points must be >= 2");
    if (out.csv(true)) {
      std::string s = "lambda_bar,z,h\n";
      for (double lb : lambda_bars) {
        const Vector z = default_h_grid(lb, points);
        const Vector h = h_curve(lb, z);
        for (Index k = 0; k < z.size(); ++k) s += format_double(lb) + "," + format_double(z(k)) + "," + format_double(h(k)) + "\n";
      }
      return out.emit(s);
    }
    Json curves = Json::array();
    for (double lb : lambda_bars) {
      const Vector z = default_h_grid(lb, points);
      const Vector h = h_curve(lb, z);
      Index arg = 0;
      h.maxCoeff(&arg);
      curves.push_back(Json{{"lambda_bar", lb}, {"z", vector_json(z)}, {"h", vector_json(h)}, {"max_h", h(arg)},
                            {"argmax_z", z(arg)}});
    }
    out.emit(Json{{"curves", curves}});
  });

  // kappa
  auto* kappa_cmd = app.add_subcommand("kappa", "Compatibility factor of a design");
  ProblemInputs kappa_in;
  std::string design_only;
  std::string set_text;
  double kappa_c = 3.0;
  std::string kappa_mode = "exact";
  KappaOptions kappa_opt;
  kappa_cmd->add_option("--design", design_only, "Design matrix CSV")->required();
  kappa_cmd->add_flag("--header", kappa_in.header, "Skip one header line");
  kappa_cmd->add_option("--set", set_text, "Zero-based column indices of J, comma separated")->required();
  kappa_cmd->add_option("--c", kappa_c, "Cone constant c > 0")->capture_default_str();
  kappa_cmd->add_option("--mode", kappa_mode, "exact (p <= 12) or estimate")
      ->check(CLI::IsMember({"exact", "estimate"}))
      ->capture_default_str();
  kappa_cmd->add_option("--directions", kappa_opt.directions, "Random directions in estimate mode")
      ->capture_default_str();
  kappa_cmd->callback([&] {
    const Matrix x = detail::rows_to_matrix(
        detail::parse_csv(detail::read_text(design_only), kappa_in.header, design_only), design_only);
    kappa_opt.seed = g.seed;
    const KappaResult r = kappa_vector(x, parse_set(set_text), kappa_c,
                                       kappa_mode == "exact" ? KappaMode::exact : KappaMode::lower_bound_estimate,
                                       kappa_opt);
    if (out.csv()) return out.emit(vector_csv("witness", r.witness));
    out.emit(Json{{"value", r.value},
                  {"mode", to_string(r.mode)},
                  {"attained", r.attained},
                  {"witness", vector_json(r.witness)},
                  {"evaluated", r.evaluated},
                  {"c", kappa_c}});
  });

  // fit-nnp
  auto* nnp_cmd = app.add_subcommand("fit-nnp", "Nuclear-norm penalised least squares for trace regression");
  TraceInputs nnp_in;
  nnp_in.attach(nnp_cmd);
  double nnp_tol = 1e-13;
  Index nnp_iter = 200000;
  nnp_cmd->add_option("--tol", nnp_tol, "Relative objective decrease at which to stop")->capture_default_str();
  nnp_cmd->add_option("--max-iter", nnp_iter, "Maximum iterations")->capture_default_str();
  nnp_cmd->callback([&] {
    const TraceProblem problem = nnp_in.load();
    const MatrixEstimate fit = fit_nnp_ls(problem, nnp_tol, nnp_iter);
    if (!fit.converged) throw NumericalError("fit-nnp did not converge in " + std::to_string(fit.iterations) + " iterations");
    if (out.csv()) return out.emit(matrix_to_csv(fit.matrix));
    out.emit(Json{{"matrix", matrix_to_json(fit.matrix)},
                  {"singular_values", vector_json(fit.singular_values)},
                  {"method", to_string(fit.method)},
                  {"iterations", fit.iterations},
                  {"converged", fit.converged},
                  {"objective", fit.objective_history.back()},
                  {"lambda", problem.lambda()}});
  });

  // ewa-matrix
  auto* matrix_cmd = app.add_subcommand("ewa-matrix", "Matrix EWA by sampling the pseudo-posterior");
  TraceInputs matrix_in;
  matrix_in.attach(matrix_cmd);
  SamplerInputs matrix_opt;
  matrix_opt.samples = 2000;
  matrix_opt.burn_in = 300;
  matrix_opt.attach(matrix_cmd);
  matrix_cmd->callback([&] {
    const TraceProblem problem = matrix_in.load();
    const SampleSet samples = sample_matrix_posterior(problem, matrix_opt.config(g.seed));
    write_draws(matrix_opt.draws, samples);
    const MatrixEstimate est = matrix_ewa(problem, samples);
    const MatrixH h = matrix_h(problem, samples);
    if (out.csv()) return out.emit(matrix_to_csv(est.matrix));
    const BoundReport variance = check_matrix_variance_bound(problem, samples);
    out.emit(Json{{"matrix", matrix_to_json(est.matrix)},
                  {"singular_values", vector_json(est.singular_values)},
                  {"h", h.value},
                  {"h_std_error", h.std_error},
                  {"variance", variance.lhs},
                  {"variance_bound", variance.rhs},
                  {"diagnostics", diagnostics(samples)}});
  });

  // experiment
  auto* exp_cmd = app.add_subcommand("experiment", "Replication study; writes report.csv and summary.json to --out");
  std::string spec_path;
  exp_cmd->add_option("--spec", spec_path, "Experiment spec JSON")->required();
  exp_cmd->callback([&] {
    if (g.out.empty()) throw InvalidArgument("experiment: --out <directory> is required");
    Json j = parse_json_text(detail::read_text(spec_path), spec_path);
    if (j.is_object() && !j.contains("seed")) j["seed"] = g.seed;
    const ExperimentSpec spec = ExperimentSpec::from_json(j);
    const ExperimentResult result = run_experiment(spec);
    write_experiment_outputs(result, g.out);
    for (const auto& r : result.reports) {
      out.note(r.name + ": " + (r.passed ? "pass" : "FAIL") + " (lhs " + format_double(r.lhs) + ", rhs " +
               format_double(r.rhs) + ")");
    }
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return report_error("usage", e.what(), kUsage);
  } catch (const DataError& e) {
    return report_error("data", e.what(), kData);
  } catch (const DimensionMismatch& e) {
    return report_error("data", e.what(), kData);
  } catch (const NumericalError& e) {
    return report_error("numerical", e.what(), kNumerical);
  } catch (const InvalidArgument& e) {
    return report_error("usage", e.what(), kUsage);
  } catch (const std::exception& e) {
    return report_error("numerical", e.what(), kNumerical);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
