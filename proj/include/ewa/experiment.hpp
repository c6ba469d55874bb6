#ifndef EWA_EXPERIMENT_HPP
#define EWA_EXPERIMENT_HPP

#include "ewa/compatibility.hpp"
#include "ewa/core.hpp"
#include "ewa/io.hpp"
#include "ewa/lasso.hpp"
#include "ewa/model.hpp"
#include "ewa/orthonormal.hpp"
#include "ewa/random.hpp"
#include "ewa/sampler.hpp"
#include "ewa/trace.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace ewa {

enum class Scenario { vector, matrix };
enum class DesignKind { orthonormal, gaussian_iid, duplicated_columns, entry_sampling };
enum class TauRule { sigma2_over_np, sigma2_over_n, explicit_value };
enum class Study { oracle, sure, interpolation, concentration, noise_tail };

namespace detail {

template <class E>
struct EnumNames;

template <>
struct EnumNames<Scenario> {
  static constexpr std::pair<Scenario, const char*> table[] = {{Scenario::vector, "vector"},
                                                                {Scenario::matrix, "matrix"}};
};
template <>
struct EnumNames<DesignKind> {
  static constexpr std::pair<DesignKind, const char*> table[] = {
      {DesignKind::orthonormal, "orthonormal"},
      {DesignKind::gaussian_iid, "gaussian-iid"},
      {DesignKind::duplicated_columns, "duplicated-columns"},
      {DesignKind::entry_sampling, "entry-sampling"}};
};
template <>
struct EnumNames<TauRule> {
  static constexpr std::pair<TauRule, const char*> table[] = {{TauRule::sigma2_over_np, "sigma2_over_np"},
                                                               {TauRule::sigma2_over_n, "sigma2_over_n"},
                                                               {TauRule::explicit_value, "explicit"}};
};
template <>
struct EnumNames<Study> {
  static constexpr std::pair<Study, const char*> table[] = {{Study::oracle, "oracle"},
                                                             {Study::sure, "sure"},
                                                             {Study::interpolation, "interpolation"},
                                                             {Study::concentration, "concentration"},
                                                             {Study::noise_tail, "noise-tail"}};
};

template <class E>
const char* enum_name(E value) {
  for (const auto& [v, name] : EnumNames<E>::table) {
    if (v == value) return name;
  }
  return "?";
}

template <class E>
E enum_from_name(const std::string& name, const char* what) {
  std::string known;
  for (const auto& [v, n] : EnumNames<E>::table) {
    if (name == n) return v;
    known += known.empty() ? n : std::string(", ") + n;
  }
  throw DataError(std::string("experiment: unknown ") + what + " '" + name + "' (expected " + known + ")");
}

}  // namespace detail

inline const char* to_string(Scenario v) { return detail::enum_name(v); }
inline const char* to_string(DesignKind v) { return detail::enum_name(v); }
inline const char* to_string(TauRule v) { return detail::enum_name(v); }
inline const char* to_string(Study v) { return detail::enum_name(v); }

/// Synthetic replication study. Vector scenarios use n, p and sparsity;
/// matrix scenarios use n, m1, m2 and sparsity as the rank.
struct ExperimentSpec {
  Study study = Study::oracle;
  Scenario scenario = Scenario::vector;
  Index n = 64;
  Index p = 64;
  Index m1 = 8;
  Index m2 = 8;
  Index sparsity = 4;
  double sigma = 1.0;
  DesignKind design = DesignKind::orthonormal;
  double delta = 0.05;
  TauRule tau_rule = TauRule::sigma2_over_np;
  double tau_value = 0.0;
  Index replications = 500;
  std::uint64_t seed = 0;
  double gamma = 2.0;
  /// Sampler settings for non-orthonormal designs and the matrix case.
  Index n_samples = 2000;
  Index burn_in = 300;
  /// Level t of the concentration event; 0 means sqrt(dimension).
  double concentration_t = 0.0;
  std::vector<double> lambda_grid;
  std::vector<double> tau_grid;
  /// 0 means std::thread::hardware_concurrency().
  unsigned threads = 0;

  Index dimension() const { return scenario == Scenario::vector ? p : m1 * m2; }

  void validate() const {
    require(n >= 1, "experiment: n must be >= 1");
    require(sigma >= 0.0 && std::isfinite(sigma), "experiment: sigma must be >= 0");
    require(delta > 0.0 && delta < 1.0, "experiment: delta must be in (0, 1)");
    require(replications >= 1, "experiment: replications must be >= 1");
    require(gamma > 1.0, "experiment: gamma must be > 1");
    require(n_samples >= 1 && burn_in >= 0, "experiment: invalid sampler lengths");
    require(concentration_t >= 0.0, "experiment: concentration_t must be >= 0");
    if (scenario == Scenario::vector) {
      require(p >= 1, "experiment: p must be >= 1");
      require(sparsity >= 0 && sparsity <= p, "experiment: need 0 <= s <= p");
      require(design != DesignKind::entry_sampling, "experiment: entry-sampling is a matrix design");
      if (design == DesignKind::orthonormal) require(p <= n, "experiment: orthonormal design needs p <= n");
    } else {
      require(m1 >= 1 && m2 >= 1, "experiment: m1 and m2 must be >= 1");
      require(sparsity >= 0 && sparsity <= std::min(m1, m2), "experiment: need 0 <= rank <= min(m1, m2)");
      require(design == DesignKind::entry_sampling, "experiment: matrix scenarios use entry-sampling");
    }
    if (tau_rule == TauRule::explicit_value) require(tau_value > 0.0, "experiment: explicit tau must be > 0");
    if (sigma == 0.0) require(tau_rule == TauRule::explicit_value, "experiment: sigma = 0 needs an explicit tau");
  }

  double tau() const {
    const double s2 = sigma * sigma;
    switch (tau_rule) {
      case TauRule::sigma2_over_np: return s2 / (static_cast<double>(n) * static_cast<double>(dimension()));
      case TauRule::sigma2_over_n: return s2 / static_cast<double>(n);
      case TauRule::explicit_value: return tau_value;
    }
    return tau_value;
  }

  Json to_json() const {
    return Json{{"study", to_string(study)},
                {"scenario", to_string(scenario)},
                {"n", n},
                {"p", p},
                {"m1", m1},
                {"m2", m2},
                {"sparsity", sparsity},
                {"sigma", sigma},
                {"design", to_string(design)},
                {"delta", delta},
                {"tau_rule", to_string(tau_rule)},
                {"tau_value", tau_value},
                {"replications", replications},
                {"seed", seed},
                {"gamma", gamma},
                {"n_samples", n_samples},
                {"burn_in", burn_in},
                {"concentration_t", concentration_t},
                {"lambda_grid", lambda_grid},
                {"tau_grid", tau_grid}};
  }

  /// Missing keys keep their defaults; unknown keys are rejected.
  static ExperimentSpec from_json(const Json& j) {
    if (!j.is_object()) throw DataError("experiment: spec must be a JSON object");
    ExperimentSpec s;
    static const std::vector<std::string> known = {
        "study", "scenario", "n", "p", "m1", "m2", "sparsity", "sigma", "design", "delta", "tau_rule",
        "tau_value", "replications", "seed", "gamma", "n_samples", "burn_in", "concentration_t",
        "lambda_grid", "tau_grid", "threads"};
    for (const auto& item : j.items()) {
      if (std::find(known.begin(), known.end(), item.key()) == known.end()) {
        throw DataError("experiment: unknown spec key '" + item.key() + "'");
      }
    }
    const auto count = [&](const char* key, Index& out) {
      if (!j.contains(key)) return;
      if (!j[key].is_number_integer()) throw DataError(std::string("experiment: ") + key + " must be an integer");
      out = j[key].get<Index>();
    };
    const auto real = [&](const char* key, double& out) {
      if (j.contains(key)) out = detail::json_number(j[key], key);
    };
    const auto text = [&](const char* key) -> std::optional<std::string> {
      if (!j.contains(key)) return std::nullopt;
      if (!j[key].is_string()) throw DataError(std::string("experiment: ") + key + " must be a string");
      return j[key].get<std::string>();
    };
    const auto grid = [&](const char* key, std::vector<double>& out) {
      if (!j.contains(key)) return;
      const Vector v = json_to_vector(j[key], key);
      out.assign(v.data(), v.data() + v.size());
    };
    if (auto v = text("study")) s.study = detail::enum_from_name<Study>(*v, "study");
    if (auto v = text("scenario")) s.scenario = detail::enum_from_name<Scenario>(*v, "scenario");
    if (auto v = text("design")) s.design = detail::enum_from_name<DesignKind>(*v, "design");
    if (auto v = text("tau_rule")) s.tau_rule = detail::enum_from_name<TauRule>(*v, "tau_rule");
    if (s.scenario == Scenario::matrix && !j.contains("design")) s.design = DesignKind::entry_sampling;
    count("n", s.n);
    count("p", s.p);
    count("m1", s.m1);
    count("m2", s.m2);
    count("sparsity", s.sparsity);
    count("replications", s.replications);
    count("n_samples", s.n_samples);
    count("burn_in", s.burn_in);
    real("sigma", s.sigma);
    real("delta", s.delta);
    real("tau_value", s.tau_value);
    real("gamma", s.gamma);
    real("concentration_t", s.concentration_t);
    grid("lambda_grid", s.lambda_grid);
    grid("tau_grid", s.tau_grid);
    if (j.contains("seed")) {
      if (!j["seed"].is_number_unsigned() && !j["seed"].is_number_integer()) throw DataError("experiment: bad seed");
      s.seed = j["seed"].get<std::uint64_t>();
    }
    if (j.contains("threads")) {
      Index t = 0;
      count("threads", t);
      require(t >= 0, "experiment: threads must be >= 0");
      s.threads = static_cast<unsigned>(t);
    }
    s.validate();
    return s;
  }

  /// FNV-1a of the canonical JSON form, as 16 hex digits.
  std::string hash() const {
    const std::string text = to_json().dump();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : text) {
      h ^= ch;
      h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }
};

/// Reports plus a per-replication (or per-grid-point) CSV table.
struct ExperimentResult {
  std::vector<BoundReport> reports;
  std::string csv;
  Json summary;
};

inline Json report_to_json(const BoundReport& r) {
  Json context = Json::object();
  for (const auto& [k, v] : r.context) context[k] = v;
  return Json{{"name", r.name},
              {"lhs", r.lhs},
              {"rhs", r.rhs},
              {"slack", r.slack},
              {"stochastic_slack", r.stochastic_slack},
              {"passed", r.passed},
              {"context", context}};
}

/// Writes report.csv and summary.json into `directory`.
inline void write_experiment_outputs(const ExperimentResult& result, const std::string& directory) {
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec) throw DataError("cannot create " + directory + ": " + ec.message());
  write_text((std::filesystem::path(directory) / "report.csv").string(), result.csv);
  write_text((std::filesystem::path(directory) / "summary.json").string(), result.summary.dump(2) + "\n");
}

namespace detail {

// Runs body(k) for k in [0, count) on up to `threads` workers. Results must be
// written by index; the first exception by index is rethrown.
template <class Body>
void parallel_for(Index count, unsigned threads, const Body& body) {
  unsigned workers = threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : threads;
  workers = static_cast<unsigned>(std::min<Index>(workers, std::max<Index>(count, 1)));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(count));
  const auto run = [&](unsigned w) {
    for (Index k = w; k < count; k += workers) {
      try {
        body(k);
      } catch (...) {
        errors[static_cast<std::size_t>(k)] = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(run, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

constexpr std::uint64_t kDesignStream = 0xde5;
constexpr std::uint64_t kSignalStream = 0x5167;
constexpr std::uint64_t kSamplerStream = 0x5a3;

inline double binomial_se(double q, Index count) {
  const double c = std::clamp(q, 0.0, 1.0);
  return std::sqrt(c * (1.0 - c) / static_cast<double>(std::max<Index>(count, 1)));
}

// Frequency of `failures` among `count` trials against a bound on it.
inline BoundReport frequency_bound(std::string name, Index failures, Index count, double bound,
                                   const ExperimentSpec& spec) {
  auto r = BoundReport::make(std::move(name), static_cast<double>(failures) / static_cast<double>(count), bound,
                             3.0 * binomial_se(bound, count));
  r.context["trials"] = std::to_string(count);
  r.context["seed"] = std::to_string(spec.seed);
  r.context["spec_hash"] = spec.hash();
  return r;
}

// Count of per-instance failures; passes only if there are none.
inline BoundReport all_hold(std::string name, Index failures, Index count, const ExperimentSpec& spec) {
  auto r = BoundReport::make(std::move(name), static_cast<double>(failures), 0.0);
  r.context["trials"] = std::to_string(count);
  r.context["seed"] = std::to_string(spec.seed);
  r.context["spec_hash"] = spec.hash();
  return r;
}

inline std::string csv_row(const std::vector<std::string>& cells) {
  std::string out;
  for (std::size_t k = 0; k < cells.size(); ++k) {
    if (k > 0) out += ',';
    out += cells[k];
  }
  return out + "\n";
}

inline std::string flag(bool b) { return b ? "1" : "0"; }

inline Json summary_json(const ExperimentSpec& spec, const std::vector<BoundReport>& reports, Json extra = {}) {
  Json list = Json::array();
  for (const auto& r : reports) list.push_back(report_to_json(r));
  Json out{{"spec", spec.to_json()}, {"spec_hash", spec.hash()}, {"reports", list}};
  if (extra.is_object()) {
    for (const auto& item : extra.items()) out[item.key()] = item.value();
  }
  return out;
}

// s distinct indices out of p, uniformly.
inline std::vector<Index> random_subset(Engine& rng, Index p, Index s) {
  std::vector<Index> all(static_cast<std::size_t>(p));
  for (Index k = 0; k < p; ++k) all[static_cast<std::size_t>(k)] = k;
  for (Index k = 0; k < s; ++k) {
    const auto pick = k + static_cast<Index>(uniform01(rng) * static_cast<double>(p - k));
    std::swap(all[static_cast<std::size_t>(k)], all[static_cast<std::size_t>(std::min(pick, p - 1))]);
  }
  std::vector<Index> out(all.begin(), all.begin() + s);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace detail

/// Design of a vector scenario, drawn once per experiment from the seed.
/// Non-orthonormal designs are rescaled so that ||x^j||^2 = n.
inline Matrix make_vector_design(const ExperimentSpec& spec) {
  Engine rng = make_engine(spec.seed, detail::kDesignStream);
  NormalSource normal;
  switch (spec.design) {
    case DesignKind::orthonormal:
      return std::sqrt(static_cast<double>(spec.n)) * random_orthonormal_columns(rng, spec.n, spec.p);
    case DesignKind::gaussian_iid:
    case DesignKind::duplicated_columns: {
      Matrix x(spec.n, spec.p);
      for (Index k = 0; k < x.size(); ++k) x.data()[k] = normal(rng);
      x = rescale_columns(x).first;
      if (spec.design == DesignKind::duplicated_columns) {
        for (Index j = 0; j + 1 < spec.p; j += 2) x.col(j + 1) = x.col(j);
      }
      return x;
    }
    case DesignKind::entry_sampling:
      break;
  }
  throw InvalidArgument("make_vector_design: entry-sampling is a matrix design");
}

/// s-sparse vector with entries +-1 on a uniformly random support.
inline Coefficients sparse_signal(Engine& rng, Index p, Index s) {
  Coefficients beta = Coefficients::Zero(p);
  for (Index j : detail::random_subset(rng, p, s)) beta(j) = uniform01(rng) < 0.5 ? -1.0 : 1.0;
  return beta;
}

/// Rank-r matrix L R^T with orthonormal factors, so every nonzero singular value is 1.
inline Matrix low_rank_signal(Engine& rng, Index m1, Index m2, Index r) {
  if (r == 0) return Matrix::Zero(m1, m2);
  return random_orthonormal_columns(rng, m1, r) * random_orthonormal_columns(rng, m2, r).transpose();
}

namespace detail {

struct VectorFit {
  EwaEstimate ewa;
  double h = 0.0;
  double h_se = 0.0;
  const SampleSet* samples = nullptr;
};

// Closed form for orthonormal designs, Gibbs sampling otherwise.
inline VectorFit fit_vector_ewa(const RegressionProblem& problem, bool orthonormal, const ExperimentSpec& spec,
                                std::uint64_t seed, SampleSet* storage) {
  VectorFit out;
  if (orthonormal) {
    ShrinkageInputs in{problem.tau(), problem.lambda(),
                       problem.design().transpose() * problem.response() / static_cast<double>(problem.n())};
    out.ewa = ewa_closed_form(in);
    out.h = out.ewa.h_value;
    return out;
  }
  SamplerConfig config;
  config.seed = seed;
  config.n_samples = spec.n_samples;
  config.burn_in = spec.burn_in;
  *storage = sample_posterior(problem, config);
  out.samples = storage;
  out.ewa = ewa_from_samples(*storage);
  const HEstimates h = h_from_samples(problem, *storage, out.ewa, Coefficients::Zero(problem.p()));
  out.h = h.definition;
  out.h_se = h.definition_se;
  out.ewa.h_value = out.h;
  out.ewa.h_std_error = out.h_se;
  return out;
}

}  // namespace detail

/// Vector oracle inequality at beta_bar = beta*, J = support(beta*), with
/// kappa_{J,3} exact when p <= 12 or the design is orthonormal.
inline ExperimentResult run_oracle_check_vector(const ExperimentSpec& spec) {
  spec.validate();
  require(spec.scenario == Scenario::vector, "run_oracle_check_vector: vector scenario required");
  const Matrix x = make_vector_design(spec);
  const Index n = spec.n, p = spec.p, s = spec.sparsity;
  // sigma = 0 calibrates to lambda = 0, which the shrinkage rule does not accept.
  const double lambda_used = std::max(calibrate_lambda(spec.sigma, n, p, spec.delta), 1e-3);
  const double tau = spec.tau();
  const Matrix gram = x.transpose() * x / static_cast<double>(n);
  const bool orthonormal = (gram - Matrix::Identity(p, p)).cwiseAbs().maxCoeff() <= 1e-9;
  const bool kappa_exact = orthonormal || p <= kKappaExactMaxDim;
  const double c_soi2 = (spec.gamma + 1.0) / (spec.gamma - 1.0);
  std::mutex cache_mutex;
  std::map<std::pair<std::vector<Index>, double>, double> kappa_cache;
  const auto kappa_for = [&](const std::vector<Index>& j_set, double c) -> double {
    if (j_set.empty()) return 1.0;
    if (orthonormal) return 1.0;
    const auto key = std::make_pair(j_set, c);
    {
      std::lock_guard<std::mutex> lock(cache_mutex);
      auto it = kappa_cache.find(key);
      if (it != kappa_cache.end()) return it->second;
    }
    KappaOptions options;
    options.seed = spec.seed;
    const double value =
        kappa_from_gram(gram, j_set, c, kappa_exact ? KappaMode::exact : KappaMode::lower_bound_estimate, options)
            .value;
    std::lock_guard<std::mutex> lock(cache_mutex);
    kappa_cache.emplace(key, value);
    return value;
  };

  struct Row {
    std::uint64_t seed = 0;
    double loss = 0.0, soi_rhs = 0.0, soi2_rhs = 0.0, h = 0.0, h_se = 0.0, noise_sup = 0.0, kappa = 0.0;
    bool soi = false, event = false, soi2 = true, h_ok = true;
  };
  std::vector<Row> rows(static_cast<std::size_t>(spec.replications));
  detail::parallel_for(spec.replications, spec.threads, [&](Index k) {
    Row& row = rows[static_cast<std::size_t>(k)];
    row.seed = derive_seed(spec.seed, static_cast<std::uint64_t>(k) + 1);
    Engine rng = make_engine(row.seed, detail::kSignalStream);
    NormalSource normal;
    const Coefficients truth = sparse_signal(rng, p, s);
    const Vector xi = spec.sigma * normal.vector(rng, n);
    const RegressionProblem problem(x, x * truth + xi, spec.sigma, lambda_used, tau);
    SampleSet storage;
    const auto fit = detail::fit_vector_ewa(problem, orthonormal, spec, derive_seed(row.seed, detail::kSamplerStream),
                                            &storage);
    std::vector<Index> support;
    for (Index j = 0; j < p; ++j) {
      if (truth(j) != 0.0) support.push_back(j);
    }
    row.kappa = kappa_for(support, 3.0);
    const double js = static_cast<double>(support.size());
    row.loss = prediction_loss(problem, fit.ewa.mean, truth);
    row.soi_rhs = 9.0 * lambda_used * lambda_used * js / (4.0 * row.kappa) + 2.0 * static_cast<double>(p) * tau;
    row.soi = row.loss <= row.soi_rhs;
    row.noise_sup = (x.transpose() * xi).cwiseAbs().maxCoeff();
    row.event = row.noise_sup <= static_cast<double>(n) * lambda_used / spec.gamma;
    row.h = fit.h;
    row.h_se = fit.h_se;
    const double kappa2 = kappa_for(support, c_soi2);
    const double g2 = spec.gamma * spec.gamma;
    row.soi2_rhs = lambda_used * lambda_used * (spec.gamma + 1.0) * (spec.gamma + 1.0) * js / (g2 * kappa2) +
                   2.0 * row.h;
    if (row.event) {
      row.soi2 = row.loss <= row.soi2_rhs + 6.0 * row.h_se + numeric_tolerance(row.loss, row.soi2_rhs);
    }
    row.h_ok = row.h >= -3.0 * row.h_se - 1e-10 * static_cast<double>(p) * tau &&
               row.h <= static_cast<double>(p) * tau * (1.0 + 1e-10) + 3.0 * row.h_se;
  });

  const Index reps = spec.replications;
  Index soi_fail = 0, events = 0, soi2_fail = 0, h_fail = 0, noise_exceed = 0;
  std::string csv = "replication,seed,loss,soi_rhs,soi_pass,kappa,event,soi2_rhs,soi2_pass,h,h_se,noise_sup,spec_hash\n";
  const std::string hash = spec.hash();
  for (Index k = 0; k < reps; ++k) {
    const Row& r = rows[static_cast<std::size_t>(k)];
    soi_fail += r.soi ? 0 : 1;
    events += r.event ? 1 : 0;
    soi2_fail += r.event && !r.soi2 ? 1 : 0;
    h_fail += r.h_ok ? 0 : 1;
    noise_exceed += r.event ? 0 : 1;
    csv += detail::csv_row({std::to_string(k), std::to_string(r.seed), format_double(r.loss), format_double(r.soi_rhs),
                            detail::flag(r.soi), format_double(r.kappa), detail::flag(r.event),
                            format_double(r.soi2_rhs), detail::flag(r.event ? r.soi2 : true), format_double(r.h),
                            format_double(r.h_se), format_double(r.noise_sup), hash});
  }
  std::vector<BoundReport> reports;
  auto soi = detail::frequency_bound("soi_failure_rate", soi_fail, reps, spec.delta, spec);
  soi.context["kappa_mode"] = orthonormal ? "exact (orthonormal)" : (kappa_exact ? "exact" : "lower-bound-estimate");
  soi.context["asserted"] = kappa_exact ? "true" : "false";
  const double fast_term = 9.0 * lambda_used * lambda_used * static_cast<double>(s) / 4.0;
  soi.context["tau_term_ratio"] = format_double(s > 0 ? 2.0 * static_cast<double>(p) * tau / fast_term : 0.0);
  soi.context["lambda"] = format_double(lambda_used);
  soi.context["tau"] = format_double(tau);
  reports.push_back(soi);
  auto soi2 = detail::all_hold("soi2_in_event", soi2_fail, events, spec);
  soi2.context["gamma"] = format_double(spec.gamma);
  soi2.context["asserted"] = kappa_exact ? "true" : "false";
  reports.push_back(soi2);
  reports.push_back(detail::all_hold("h_in_range", h_fail, reps, spec));
  auto noise = detail::frequency_bound("noise_event_exceedance", noise_exceed, reps, spec.delta, spec);
  noise.context["gamma"] = format_double(spec.gamma);
  reports.push_back(noise);
  ExperimentResult result;
  result.reports = std::move(reports);
  result.csv = std::move(csv);
  result.summary = detail::summary_json(spec, result.reports,
                                        Json{{"lambda", lambda_used}, {"tau", tau}, {"events", events}});
  return result;
}

/// Matrix oracle inequality at B_bar = B*, J = [rank]. The fast-rate bound
/// uses a kappa estimate and is reported only; the slow-rate bound (J empty)
/// and the kappa-free sampler checks are asserted.
inline ExperimentResult run_oracle_check_matrix(const ExperimentSpec& spec, Index kappa_budget = 2000) {
  spec.validate();
  require(spec.scenario == Scenario::matrix, "run_oracle_check_matrix: matrix scenario required");
  const Index n = spec.n, m1 = spec.m1, m2 = spec.m2, r = spec.sparsity, d = m1 * m2;
  Engine design_rng = make_engine(spec.seed, detail::kDesignStream);
  const Matrix rows_x = entry_sampling_design(design_rng, n, m1, m2);
  const double vx = v_x(rows_x, m1, m2);
  const double lambda = std::max(calibrate_lambda_matrix(spec.sigma, vx, n, m1, m2, spec.delta), 1e-3);
  const double tau = spec.tau();
  const double t = spec.concentration_t > 0.0 ? spec.concentration_t : std::sqrt(static_cast<double>(d));

  struct Row {
    std::uint64_t seed = 0;
    double loss = 0.0, kappa = 0.0, fast_rhs = 0.0, slow_rhs = 0.0, soi2_rhs = 0.0, h = 0.0, h_se = 0.0,
           noise_op = 0.0, variance = 0.0;
    bool fast = false, slow = false, event = false, soi2 = true, h_ok = false, variance_ok = false,
         concentration_ok = false;
  };
  std::vector<Row> rows(static_cast<std::size_t>(spec.replications));
  detail::parallel_for(spec.replications, spec.threads, [&](Index k) {
    Row& row = rows[static_cast<std::size_t>(k)];
    row.seed = derive_seed(spec.seed, static_cast<std::uint64_t>(k) + 1);
    Engine rng = make_engine(row.seed, detail::kSignalStream);
    NormalSource normal;
    const Matrix truth = low_rank_signal(rng, m1, m2, r);
    const Vector xi = spec.sigma * normal.vector(rng, n);
    const TraceProblem problem(rows_x, rows_x * vec(truth) + xi, m1, m2, spec.sigma, lambda, tau);
    SamplerConfig config;
    config.seed = derive_seed(row.seed, detail::kSamplerStream);
    config.n_samples = spec.n_samples;
    config.burn_in = spec.burn_in;
    const SampleSet samples = sample_matrix_posterior(problem, config);
    const MatrixEstimate ewa = matrix_ewa(problem, samples);
    const MatrixH h = matrix_h(problem, samples);
    row.loss = trace_loss(problem, ewa.matrix, truth);
    row.h = h.value;
    row.h_se = h.std_error;
    const double dtau = static_cast<double>(d) * tau;
    row.h_ok = row.h <= dtau + 3.0 * row.h_se && row.h >= -3.0 * row.h_se;
    const BoundReport variance = check_matrix_variance_bound(problem, samples);
    row.variance = variance.lhs;
    row.variance_ok = variance.passed;
    row.concentration_ok = check_matrix_concentration(problem, samples, t).passed;
    row.slow_rhs = 4.0 * lambda * nuclear_norm(truth) + 2.0 * dtau;
    row.slow = row.loss <= row.slow_rhs;
    if (r > 0) {
      row.kappa = kappa_matrix(problem, truth, leading_set(r), 3.0, kappa_budget, row.seed).value;
      row.fast_rhs = 9.0 * lambda * lambda * static_cast<double>(r) / (4.0 * row.kappa) + 2.0 * dtau;
    } else {
      row.fast_rhs = row.slow_rhs;
    }
    row.fast = row.loss <= row.fast_rhs;
    row.noise_op = noise_operator_norm(problem, xi);
    row.event = row.noise_op <= static_cast<double>(n) * lambda / spec.gamma;
    row.soi2_rhs = 4.0 * lambda * nuclear_norm(truth) + 2.0 * row.h;
    if (row.event) row.soi2 = row.loss <= row.soi2_rhs + 6.0 * row.h_se;
  });

  const Index reps = spec.replications;
  Index fast_fail = 0, slow_fail = 0, events = 0, soi2_fail = 0, h_fail = 0, var_fail = 0, conc_fail = 0;
  std::string csv =
      "replication,seed,loss,kappa_estimate,fast_rhs,fast_pass,slow_rhs,slow_pass,event,soi2_rhs,soi2_pass,h,h_se,"
      "variance,variance_pass,concentration_pass,noise_op,spec_hash\n";
  const std::string hash = spec.hash();
  for (Index k = 0; k < reps; ++k) {
    const Row& x = rows[static_cast<std::size_t>(k)];
    fast_fail += x.fast ? 0 : 1;
    slow_fail += x.slow ? 0 : 1;
    events += x.event ? 1 : 0;
    soi2_fail += x.event && !x.soi2 ? 1 : 0;
    h_fail += x.h_ok ? 0 : 1;
    var_fail += x.variance_ok ? 0 : 1;
    conc_fail += x.concentration_ok ? 0 : 1;
    csv += detail::csv_row({std::to_string(k), std::to_string(x.seed), format_double(x.loss), format_double(x.kappa),
                            format_double(x.fast_rhs), detail::flag(x.fast), format_double(x.slow_rhs),
                            detail::flag(x.slow), detail::flag(x.event), format_double(x.soi2_rhs),
                            detail::flag(x.event ? x.soi2 : true), format_double(x.h), format_double(x.h_se),
                            format_double(x.variance), detail::flag(x.variance_ok), detail::flag(x.concentration_ok),
                            format_double(x.noise_op), hash});
  }
  std::vector<BoundReport> reports;
  auto fast = detail::frequency_bound("theorem_fast_rate_failure_rate", fast_fail, reps, spec.delta, spec);
  fast.context["kappa_mode"] = "lower-bound-estimate";
  fast.context["asserted"] = "false";
  reports.push_back(fast);
  auto slow = detail::frequency_bound("theorem_slow_rate_failure_rate", slow_fail, reps, spec.delta, spec);
  slow.context["asserted"] = "true";
  reports.push_back(slow);
  auto soi2 = detail::all_hold("soi2_slow_rate_in_event", soi2_fail, events, spec);
  soi2.context["gamma"] = format_double(spec.gamma);
  reports.push_back(soi2);
  reports.push_back(detail::all_hold("matrix_h_in_range", h_fail, reps, spec));
  reports.push_back(detail::all_hold("matrix_variance_bound", var_fail, reps, spec));
  auto conc = detail::all_hold("matrix_concentration", conc_fail, reps, spec);
  conc.context["t"] = format_double(t);
  reports.push_back(conc);
  ExperimentResult result;
  result.reports = std::move(reports);
  result.csv = std::move(csv);
  result.summary = detail::summary_json(spec, result.reports,
                                        Json{{"lambda", lambda}, {"tau", tau}, {"v_x", vx}, {"events", events}});
  return result;
}

/// Unbiasedness of the EWA and lasso risk estimates at a fixed truth over
/// noise replications, for every (lambda, tau) grid point.
inline ExperimentResult run_sure_study(const ExperimentSpec& spec, std::vector<double> lambda_grid = {},
                                       std::vector<double> tau_grid = {}) {
  spec.validate();
  require(spec.scenario == Scenario::vector, "run_sure_study: vector scenario required");
  if (lambda_grid.empty()) lambda_grid = spec.lambda_grid;
  if (tau_grid.empty()) tau_grid = spec.tau_grid;
  if (lambda_grid.empty()) lambda_grid = {calibrate_lambda(spec.sigma, spec.n, spec.p, spec.delta)};
  if (tau_grid.empty()) tau_grid = {spec.tau()};
  for (double l : lambda_grid) require(l > 0.0, "run_sure_study: lambda grid must be positive");
  for (double t : tau_grid) require(t > 0.0, "run_sure_study: tau grid must be positive");
  const Matrix x = make_vector_design(spec);
  const Index n = spec.n, p = spec.p;
  const bool orthonormal =
      (x.transpose() * x / static_cast<double>(n) - Matrix::Identity(p, p)).cwiseAbs().maxCoeff() <= 1e-9;
  Engine truth_rng = make_engine(spec.seed, detail::kSignalStream);
  const Coefficients truth = sparse_signal(truth_rng, p, spec.sparsity);
  const Index reps = spec.replications;
  const std::size_t cells = lambda_grid.size() * tau_grid.size();

  struct Cell {
    double sure_ewa = 0, loss_ewa = 0, sure_lasso = 0, loss_lasso = 0, probe_ewa = 0, probe_lasso = 0;
  };
  std::vector<std::vector<Cell>> data(static_cast<std::size_t>(reps), std::vector<Cell>(cells));
  detail::parallel_for(reps, spec.threads, [&](Index k) {
    const std::uint64_t seed = derive_seed(spec.seed, static_cast<std::uint64_t>(k) + 1);
    Engine rng = make_engine(seed, detail::kSignalStream);
    NormalSource normal;
    const Vector y = x * truth + spec.sigma * normal.vector(rng, n);
    Vector y_probe = y;
    y_probe(0) += 1e-6;
    std::size_t cell = 0;
    for (double lambda : lambda_grid) {
      const RegressionProblem base(x, y, spec.sigma, lambda, tau_grid.front());
      const RegressionProblem probe(x, y_probe, spec.sigma, lambda, tau_grid.front());
      const LassoFit lasso = fit_lasso(base);
      const LassoFit lasso_probe = fit_lasso(probe);
      const double lasso_sure_value = lasso_sure(base, lasso);
      const double lasso_loss = prediction_loss(base, lasso.coefficients, truth);
      const double lasso_jump = std::abs(lasso_sure(probe, lasso_probe) - lasso_sure_value);
      for (double tau : tau_grid) {
        Cell& c = data[static_cast<std::size_t>(k)][cell++];
        const RegressionProblem problem = base.with_tau(tau);
        const RegressionProblem problem_probe = probe.with_tau(tau);
        SampleSet s1, s2;
        const std::uint64_t sampler_seed = derive_seed(seed, detail::kSamplerStream);
        const auto fit = detail::fit_vector_ewa(problem, orthonormal, spec, sampler_seed, &s1);
        const auto fit_probe = detail::fit_vector_ewa(problem_probe, orthonormal, spec, sampler_seed, &s2);
        c.sure_ewa = ewa_sure(problem, fit.ewa);
        c.loss_ewa = prediction_loss(problem, fit.ewa.mean, truth);
        c.probe_ewa = std::abs(ewa_sure(problem_probe, fit_probe.ewa) - c.sure_ewa);
        c.sure_lasso = lasso_sure_value;
        c.loss_lasso = lasso_loss;
        c.probe_lasso = lasso_jump;
      }
    }
  });

  const auto mean_se = [&](std::size_t cell, double Cell::*field) {
    Vector v(reps);
    for (Index k = 0; k < reps; ++k) v(k) = data[static_cast<std::size_t>(k)][cell].*field;
    const double m = v.mean();
    const double sd = reps > 1 ? std::sqrt((v.array() - m).square().sum() / static_cast<double>(reps - 1)) : 0.0;
    return std::pair{m, sd / std::sqrt(static_cast<double>(reps))};
  };
  std::string csv =
      "lambda,tau,mean_sure_ewa,mean_loss_ewa,combined_se_ewa,mean_sure_lasso,mean_loss_lasso,combined_se_lasso,"
      "probe_jump_ewa,probe_jump_lasso,spec_hash\n";
  std::vector<BoundReport> reports;
  const std::string hash = spec.hash();
  std::size_t cell = 0;
  for (double lambda : lambda_grid) {
    for (double tau : tau_grid) {
      const auto [se_mean, se_se] = mean_se(cell, &Cell::sure_ewa);
      const auto [le_mean, le_se] = mean_se(cell, &Cell::loss_ewa);
      const auto [sl_mean, sl_se] = mean_se(cell, &Cell::sure_lasso);
      const auto [ll_mean, ll_se] = mean_se(cell, &Cell::loss_lasso);
      const auto [pe, pe_se] = mean_se(cell, &Cell::probe_ewa);
      const auto [pl, pl_se] = mean_se(cell, &Cell::probe_lasso);
      (void)pe_se;
      (void)pl_se;
      const double comb_e = std::hypot(se_se, le_se);
      const double comb_l = std::hypot(sl_se, ll_se);
      csv += detail::csv_row({format_double(lambda), format_double(tau), format_double(se_mean), format_double(le_mean),
                              format_double(comb_e), format_double(sl_mean), format_double(ll_mean),
                              format_double(comb_l), format_double(pe), format_double(pl), hash});
      std::map<std::string, std::string> context{{"lambda", format_double(lambda)},
                                                 {"tau", format_double(tau)},
                                                 {"replications", std::to_string(reps)},
                                                 {"seed", std::to_string(spec.seed)},
                                                 {"spec_hash", hash}};
      reports.push_back(BoundReport::make("ewa_sure_unbiased", std::abs(se_mean - le_mean), 0.0, 3.0 * comb_e, context));
      reports.push_back(
          BoundReport::make("lasso_sure_unbiased", std::abs(sl_mean - ll_mean), 0.0, 3.0 * comb_l, context));
      ++cell;
    }
  }
  // Largest change between adjacent lambda values, per noise draw, at the first tau.
  double lasso_jump = 0.0, ewa_jump = 0.0;
  const std::size_t stride = tau_grid.size();
  for (Index k = 0; k < reps; ++k) {
    for (std::size_t a = 1; a < lambda_grid.size(); ++a) {
      const Cell& prev = data[static_cast<std::size_t>(k)][(a - 1) * stride];
      const Cell& next = data[static_cast<std::size_t>(k)][a * stride];
      lasso_jump = std::max(lasso_jump, std::abs(next.sure_lasso - prev.sure_lasso));
      ewa_jump = std::max(ewa_jump, std::abs(next.sure_ewa - prev.sure_ewa));
    }
  }
  ExperimentResult result;
  result.reports = std::move(reports);
  result.csv = std::move(csv);
  result.summary = detail::summary_json(spec, result.reports,
                                        Json{{"max_adjacent_jump_lasso", lasso_jump}, {"max_adjacent_jump_ewa", ewa_jump}});
  return result;
}

struct InterpolationPoint {
  double tau = 0.0;
  double distance = 0.0;
  double mc_slack = 0.0;
  std::string label;
};

/// ||EWA(tau) - lasso|| along a decreasing list of temperatures. Orthonormal
/// designs use the closed form, others the sampler with a 3 SE slack column.
inline std::vector<InterpolationPoint> run_interpolation_path(const RegressionProblem& problem,
                                                              const std::vector<double>& tau_list,
                                                              const SamplerConfig& config = {}) {
  require(!tau_list.empty(), "run_interpolation_path: empty tau list");
  for (std::size_t k = 0; k < tau_list.size(); ++k) {
    require(tau_list[k] > 0.0, "run_interpolation_path: tau must be > 0");
    if (k > 0) require(tau_list[k] < tau_list[k - 1], "run_interpolation_path: tau list must be decreasing");
  }
  const LassoFit lasso = fit_lasso(problem);
  const bool orthonormal = is_orthonormal(problem);
  const double bayes = problem.sigma() * problem.sigma() / static_cast<double>(problem.n());
  std::vector<InterpolationPoint> out;
  for (double tau : tau_list) {
    const RegressionProblem at = problem.with_tau(tau);
    InterpolationPoint point;
    point.tau = tau;
    EwaEstimate est;
    if (orthonormal) {
      est = ewa_closed_form({tau, at.lambda(),
                             at.design().transpose() * at.response() / static_cast<double>(at.n())});
    } else {
      est = ewa_from_samples(sample_posterior(at, config));
      point.mc_slack = 3.0 * est.mc_std_error.norm();
    }
    point.distance = (est.mean - lasso.coefficients).norm();
    if (bayes > 0.0 && std::abs(tau - bayes) <= 1e-12 * bayes) {
      point.label = "bayesian-lasso";
    } else if (tau <= 1e-6 * bayes) {
      point.label = "near-lasso";
    }
    out.push_back(point);
  }
  return out;
}

inline std::string interpolation_csv(const std::vector<InterpolationPoint>& path) {
  std::string csv = "tau,distance,mc_slack,label\n";
  for (const auto& p : path) {
    csv += detail::csv_row({format_double(p.tau), format_double(p.distance), format_double(p.mc_slack), p.label});
  }
  return csv;
}

/// True when the distances never increase as tau decreases.
inline bool interpolation_monotone(const std::vector<InterpolationPoint>& path) {
  for (std::size_t k = 1; k < path.size(); ++k) {
    if (path[k].distance > path[k - 1].distance * (1.0 + 1e-12) + path[k].mc_slack + path[k - 1].mc_slack) {
      return false;
    }
  }
  return true;
}

/// Per-posterior concentration checks aggregated over replications: the
/// potential level event at t, the loss event around the truth, and the
/// variance bound.
inline ExperimentResult run_concentration_study(const ExperimentSpec& spec) {
  spec.validate();
  require(spec.scenario == Scenario::vector, "run_concentration_study: vector scenario required");
  const Matrix x = make_vector_design(spec);
  const Index n = spec.n, p = spec.p;
  const double lambda = std::max(calibrate_lambda(spec.sigma, n, p, spec.delta), 1e-3);
  const double tau = spec.tau();
  const double t = spec.concentration_t > 0.0 ? spec.concentration_t : std::sqrt(static_cast<double>(p));
  const Matrix gram = x.transpose() * x / static_cast<double>(n);
  const bool orthonormal = (gram - Matrix::Identity(p, p)).cwiseAbs().maxCoeff() <= 1e-9;
  require(orthonormal || p <= kKappaExactMaxDim || spec.sparsity == 0,
          "run_concentration_study: needs an exact kappa (orthonormal design or p <= 12)");

  struct Row {
    std::uint64_t seed = 0;
    BoundReport level, event, variance;
  };
  std::vector<Row> rows(static_cast<std::size_t>(spec.replications));
  detail::parallel_for(spec.replications, spec.threads, [&](Index k) {
    Row& row = rows[static_cast<std::size_t>(k)];
    row.seed = derive_seed(spec.seed, static_cast<std::uint64_t>(k) + 1);
    Engine rng = make_engine(row.seed, detail::kSignalStream);
    NormalSource normal;
    const Coefficients truth = sparse_signal(rng, p, spec.sparsity);
    const RegressionProblem problem(x, x * truth + spec.sigma * normal.vector(rng, n), spec.sigma, lambda, tau);
    SamplerConfig config;
    config.seed = derive_seed(row.seed, detail::kSamplerStream);
    config.n_samples = spec.n_samples;
    config.burn_in = spec.burn_in;
    const SampleSet samples = sample_posterior(problem, config);
    std::vector<Index> support;
    for (Index j = 0; j < p; ++j) {
      if (truth(j) != 0.0) support.push_back(j);
    }
    const double kappa =
        support.empty() || orthonormal ? 1.0 : kappa_from_gram(gram, support, 3.0, KappaMode::exact).value;
    row.level = check_concentration(problem, samples, t);
    row.event = check_concentration_event(problem, samples, truth, kappa);
    row.variance = check_variance_bound(problem, samples);
  });
  Index level_fail = 0, event_fail = 0, var_fail = 0;
  double worst_level = 0.0, worst_event = 0.0;
  std::string csv = "replication,seed,level_freq,level_bound,level_pass,event_freq,event_bound,event_pass,variance,"
                    "variance_bound,variance_pass,spec_hash\n";
  const std::string hash = spec.hash();
  for (Index k = 0; k < spec.replications; ++k) {
    const Row& r = rows[static_cast<std::size_t>(k)];
    level_fail += r.level.passed ? 0 : 1;
    event_fail += r.event.passed ? 0 : 1;
    var_fail += r.variance.passed ? 0 : 1;
    worst_level = std::max(worst_level, r.level.lhs);
    worst_event = std::max(worst_event, r.event.lhs);
    csv += detail::csv_row({std::to_string(k), std::to_string(r.seed), format_double(r.level.lhs),
                            format_double(r.level.rhs), detail::flag(r.level.passed), format_double(r.event.lhs),
                            format_double(r.event.rhs), detail::flag(r.event.passed), format_double(r.variance.lhs),
                            format_double(r.variance.rhs), detail::flag(r.variance.passed), hash});
  }
  std::vector<BoundReport> reports;
  auto level = detail::all_hold("concentration_level", level_fail, spec.replications, spec);
  level.context["t"] = format_double(t);
  level.context["worst_frequency"] = format_double(worst_level);
  reports.push_back(level);
  auto event = detail::all_hold("concentration_event", event_fail, spec.replications, spec);
  event.context["worst_frequency"] = format_double(worst_event);
  reports.push_back(event);
  reports.push_back(detail::all_hold("variance_bound", var_fail, spec.replications, spec));
  ExperimentResult result;
  result.reports = std::move(reports);
  result.csv = std::move(csv);
  result.summary = detail::summary_json(spec, result.reports, Json{{"lambda", lambda}, {"tau", tau}, {"t", t}});
  return result;
}

/// Frequency of ||X^T xi||_inf > n lambda / gamma over `draws` noise vectors.
inline ExperimentResult run_noise_tail_study(const ExperimentSpec& spec, Index draws) {
  spec.validate();
  require(spec.scenario == Scenario::vector, "run_noise_tail_study: vector scenario required");
  require(draws >= 1, "run_noise_tail_study: draws must be >= 1");
  const Matrix x = make_vector_design(spec);
  const double lambda = calibrate_lambda(spec.sigma, spec.n, spec.p, spec.delta);
  const double level = static_cast<double>(spec.n) * lambda / spec.gamma;
  Engine rng = make_engine(spec.seed, detail::kSignalStream);
  NormalSource normal;
  Index exceed = 0;
  for (Index k = 0; k < draws; ++k) {
    const Vector xi = spec.sigma * normal.vector(rng, spec.n);
    exceed += (x.transpose() * xi).cwiseAbs().maxCoeff() > level ? 1 : 0;
  }
  ExperimentResult result;
  auto r = detail::frequency_bound("noise_tail", exceed, draws, spec.delta, spec);
  r.context["gamma"] = format_double(spec.gamma);
  result.reports.push_back(r);
  result.csv = "draws,exceedances,frequency,delta,spec_hash\n" +
               detail::csv_row({std::to_string(draws), std::to_string(exceed), format_double(r.lhs),
                                format_double(spec.delta), spec.hash()});
  result.summary = detail::summary_json(spec, result.reports, Json{{"lambda", lambda}});
  return result;
}

/// Dispatches on spec.study. Interpolation runs on the first replication's instance.
inline ExperimentResult run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  switch (spec.study) {
    case Study::oracle:
      return spec.scenario == Scenario::vector ? run_oracle_check_vector(spec) : run_oracle_check_matrix(spec);
    case Study::sure:
      return run_sure_study(spec);
    case Study::concentration:
      return run_concentration_study(spec);
    case Study::noise_tail:
      return run_noise_tail_study(spec, spec.replications);
    case Study::interpolation: {
      require(spec.scenario == Scenario::vector, "interpolation: vector scenario required");
      const Matrix x = make_vector_design(spec);
      Engine rng = make_engine(derive_seed(spec.seed, 1), detail::kSignalStream);
      NormalSource normal;
      const Coefficients truth = sparse_signal(rng, spec.p, spec.sparsity);
      const double lambda = std::max(calibrate_lambda(spec.sigma, spec.n, spec.p, spec.delta), 1e-3);
      const RegressionProblem problem(x, x * truth + spec.sigma * normal.vector(rng, spec.n), spec.sigma, lambda,
                                      spec.tau());
      std::vector<double> taus = spec.tau_grid;
      if (taus.empty()) {
        const double base = spec.sigma > 0.0 ? spec.sigma * spec.sigma / static_cast<double>(spec.n) : spec.tau();
        taus = {base, base / 10.0, base / 100.0, base * 1e-4, base * 1e-8};
      }
      SamplerConfig config;
      config.seed = derive_seed(spec.seed, detail::kSamplerStream);
      config.n_samples = spec.n_samples;
      config.burn_in = spec.burn_in;
      const auto path = run_interpolation_path(problem, taus, config);
      ExperimentResult result;
      result.csv = interpolation_csv(path);
      result.summary = detail::summary_json(spec, {}, Json{{"monotone", interpolation_monotone(path)}});
      return result;
    }
  }
  throw InvalidArgument("run_experiment: unknown study");
}

}  // namespace ewa

#endif  // EWA_EXPERIMENT_HPP
