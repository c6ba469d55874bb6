#ifndef EWA_SAMPLER_HPP
#define EWA_SAMPLER_HPP

#include "ewa/core.hpp"
#include "ewa/lasso.hpp"
#include "ewa/model.hpp"
#include "ewa/random.hpp"
#include "ewa/special.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace ewa {

enum class SamplerKind {
  /// Exact coordinate-wise Gibbs sweeps. Each full conditional of the
  /// pseudo-posterior is a two-piece truncated Gaussian and is drawn exactly.
  gibbs,
  /// Unadjusted Langevin on the Moreau-Yosida envelope of the penalty.
  myula,
};

inline const char* to_string(SamplerKind k) { return k == SamplerKind::gibbs ? "gibbs" : "myula"; }

struct SamplerConfig {
  SamplerKind kind = SamplerKind::gibbs;
  /// Langevin step; 0 selects moreau_gamma / 4.
  double step_size = 0.0;
  /// Envelope parameter; 0 selects min(tau, 1 / L) with L the Lipschitz
  /// constant of the smooth part of V_n / tau.
  double moreau_gamma = 0.0;
  Index burn_in = 500;
  Index n_samples = 5000;
  Index thinning = 1;
  std::uint64_t seed = 0;

  void validate() const {
    require(n_samples >= 100, "sampler: n_samples must be >= 100");
    require(burn_in >= 0, "sampler: burn_in must be >= 0");
    require(thinning >= 1, "sampler: thinning must be >= 1");
    require(step_size >= 0.0 && moreau_gamma >= 0.0, "sampler: step sizes must be >= 0");
    if (step_size > 0.0 && moreau_gamma > 0.0) {
      require(step_size < moreau_gamma, "sampler: step_size must be smaller than moreau_gamma");
    }
  }
};

/// Draws stored column-wise: draws.col(k) is the k-th retained state.
struct SampleSet {
  Matrix draws;
  SamplerConfig config;
  double acceptance_rate = 1.0;
  Coefficients start;

  Index size() const { return draws.cols(); }
  Index dim() const { return draws.rows(); }
};

// ---------------------------------------------------------------------------
// Monte Carlo error

/// Effective sample size of a scalar chain, from the initial positive
/// sequence of paired autocovariances.
inline double effective_sample_size(const Vector& series) {
  const Index n = series.size();
  if (n < 4) return static_cast<double>(n);
  const Vector c = series.array() - series.mean();
  const double c0 = c.squaredNorm() / static_cast<double>(n);
  if (!(c0 > 0.0)) return static_cast<double>(n);
  const auto autocov = [&](Index lag) {
    return c.head(n - lag).dot(c.tail(n - lag)) / static_cast<double>(n);
  };
  double sum = 0.0;
  for (Index m = 0; 2 * m + 1 < n; ++m) {
    const double pair = (m == 0 ? c0 : autocov(2 * m)) + autocov(2 * m + 1);
    if (pair <= 0.0) break;
    sum += pair;
  }
  const double tau_int = std::max(-1.0 + 2.0 * sum / c0, 1.0 / static_cast<double>(n));
  return std::min(static_cast<double>(n) / tau_int, static_cast<double>(n) * 4.0);
}

/// Standard error of the mean of a correlated chain.
inline double mc_standard_error(const Vector& series) {
  const Index n = series.size();
  if (n < 2) return 0.0;
  const double var = (series.array() - series.mean()).square().sum() / static_cast<double>(n);
  return std::sqrt(var / effective_sample_size(series));
}

// ---------------------------------------------------------------------------
// Exact scalar conditional

/// Draw from the density proportional to exp(-((x - b)^2 / 2 + lambda |x|) / tau).
inline double draw_scalar_posterior(Engine& rng, NormalSource& normal, double tau, double lambda,
                                    double b) {
  const double s = std::sqrt(tau);
  const double a = lambda / s;
  const double c = b / s;
  const double lp = log_psi(1.0, a - c);
  const double lm = log_psi(1.0, a + c);
  const double positive = 1.0 / (1.0 + std::exp(lm - lp));
  if (uniform01(rng) < positive) {
    return s * (c - a + truncated_standard_normal_above(rng, normal, a - c));
  }
  return s * (c + a - truncated_standard_normal_above(rng, normal, a + c));
}

namespace detail {

inline void check_finite(const Vector& u, Index iteration) {
  if (!u.allFinite()) {
    throw NumericalError("sampler diverged: non-finite iterate at iteration " + std::to_string(iteration));
  }
}

/// Unadjusted proximal Langevin:
/// u <- (1 - d/g) u + (d/g) prox_g(u) - d grad(u) + sqrt(2 d) xi.
template <class Gradient, class Prox>
Matrix run_myula(Vector u, const Gradient& gradient, const Prox& prox, double step, double gamma,
                 Index burn_in, Index n_samples, Index thinning, Engine& rng) {
  NormalSource normal;
  const Index dim = u.size();
  Matrix draws(dim, n_samples);
  const double ratio = step / gamma;
  const double noise = std::sqrt(2.0 * step);
  const Index total = burn_in + n_samples * thinning;
  for (Index it = 0; it < total; ++it) {
    Vector next = (1.0 - ratio) * u + ratio * prox(u, gamma) - step * gradient(u);
    for (Index k = 0; k < dim; ++k) next(k) += noise * normal(rng);
    u = std::move(next);
    check_finite(u, it);
    const Index kept = it - burn_in;
    if (kept >= 0 && (kept + 1) % thinning == 0) draws.col(kept / thinning) = u;
  }
  return draws;
}

inline double largest_eigenvalue(const Matrix& symmetric) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetric, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().maxCoeff();
}

}  // namespace detail

/// Resolves automatic step parameters against the problem.
inline SamplerConfig resolve_config(const SamplerConfig& config, double smooth_lipschitz, double tau) {
  config.validate();
  SamplerConfig out = config;
  if (out.moreau_gamma == 0.0) {
    out.moreau_gamma = smooth_lipschitz > 0.0 ? std::min(tau, 1.0 / smooth_lipschitz) : tau;
  }
  if (out.step_size == 0.0) out.step_size = out.moreau_gamma / 4.0;
  out.validate();
  return out;
}

/// Draws from the pseudo-posterior proportional to exp(-V_n / tau).
///
/// The chain starts at the lasso fit and is a deterministic function of
/// (problem, config).
inline SampleSet sample_posterior(const RegressionProblem& problem, const SamplerConfig& config) {
  config.validate();
  const Index p = problem.p();
  const double n = static_cast<double>(problem.n());
  const double tau = problem.tau();
  const double lambda = problem.lambda();
  const Matrix gram = problem.gram();
  const Vector xty = problem.design().transpose() * problem.response() / n;
  Engine rng = make_engine(config.seed, 0x5a4d);

  SampleSet out;
  out.start = fit_lasso(problem).coefficients;
  out.acceptance_rate = 1.0;

  if (config.kind == SamplerKind::myula) {
    out.config = resolve_config(config, detail::largest_eigenvalue(gram) / tau, tau);
    const auto gradient = [&](const Vector& u) -> Vector { return (gram * u - xty) / tau; };
    const auto prox = [&](const Vector& u, double gamma) -> Vector {
      const double c = gamma * lambda / tau;
      Vector r(u.size());
      for (Index k = 0; k < u.size(); ++k) r(k) = soft_threshold(u(k), c);
      return r;
    };
    out.draws = detail::run_myula(out.start, gradient, prox, out.config.step_size,
                                  out.config.moreau_gamma, out.config.burn_in, out.config.n_samples,
                                  out.config.thinning, rng);
    return out;
  }

  out.config = config;
  NormalSource normal;
  Coefficients beta = out.start;
  Vector grad = xty - gram * beta;  // X^T (y - X beta) / n
  out.draws.resize(p, config.n_samples);
  const Index total = config.burn_in + config.n_samples * config.thinning;
  for (Index it = 0; it < total; ++it) {
    for (Index j = 0; j < p; ++j) {
      const double d = gram(j, j);
      double updated;
      if (d > 0.0) {
        const double centre = (grad(j) + d * beta(j)) / d;
        updated = draw_scalar_posterior(rng, normal, tau / d, lambda / d, centre);
      } else {
        if (!(lambda > 0.0)) throw NumericalError("sampler: improper conditional for a zero column");
        // Laplace with scale tau / lambda.
        const double e = -std::log(uniform01_open_low(rng)) * tau / lambda;
        updated = uniform01(rng) < 0.5 ? e : -e;
      }
      const double delta = updated - beta(j);
      if (delta != 0.0) {
        beta(j) = updated;
        grad.noalias() -= gram.col(j) * delta;
      }
    }
    if (it % 256 == 255) grad = xty - gram * beta;
    detail::check_finite(beta, it);
    const Index kept = it - config.burn_in;
    if (kept >= 0 && (kept + 1) % config.thinning == 0) out.draws.col(kept / config.thinning) = beta;
  }
  return out;
}

/// Empirical mean and covariance (normalised by the number of draws) with
/// per-coordinate Monte Carlo standard errors.
inline EwaEstimate ewa_from_samples(const SampleSet& samples) {
  require(samples.size() >= 1, "ewa_from_samples: no draws");
  const Index p = samples.dim();
  const double count = static_cast<double>(samples.size());
  EwaEstimate est;
  est.method = Method::sampler;
  est.mean = samples.draws.rowwise().mean();
  const Matrix centred = samples.draws.colwise() - est.mean;
  est.covariance = centred * centred.transpose() / count;
  est.covariance = 0.5 * (est.covariance + est.covariance.transpose()).eval();
  est.mc_std_error.resize(p);
  for (Index j = 0; j < p; ++j) est.mc_std_error(j) = mc_standard_error(samples.draws.row(j).transpose());
  return est;
}

/// H(tau) = ||Sigma^{1/2} m||^2 + lambda ||m||_1 - m^T Sigma ls.
inline double h_general(const RegressionProblem& problem, const EwaEstimate& ewa, const Coefficients& ls) {
  require_same_size(problem.p(), ewa.mean.size(), "h_general: mean");
  require_same_size(problem.p(), ls.size(), "h_general: ls");
  const Matrix g = problem.gram();
  const Coefficients& m = ewa.mean;
  return m.dot(g * m) + problem.lambda() * m.lpNorm<1>() - m.dot(g * ls);
}

/// Both routes to H(tau) from one sample set, with delta-method standard errors.
struct HEstimates {
  double identity = 0.0;
  double identity_se = 0.0;
  double definition = 0.0;  // p tau - mean G + G(mean)
  double definition_se = 0.0;
};

inline HEstimates h_from_samples(const RegressionProblem& problem, const SampleSet& samples,
                                 const EwaEstimate& ewa, const Coefficients& ls) {
  const Matrix g = problem.gram();
  const double lambda = problem.lambda();
  const Coefficients& m = ewa.mean;
  Vector sign(m.size());
  for (Index j = 0; j < m.size(); ++j) sign(j) = sign_of(m(j));
  HEstimates out;
  out.identity = h_general(problem, ewa, ls);
  const Vector grad_identity = 2.0 * g * m + lambda * sign - g * ls;
  const Vector lin = samples.draws.transpose() * grad_identity;
  out.identity_se = mc_standard_error(lin);

  const Index count = samples.size();
  Vector gvals(count);
  for (Index k = 0; k < count; ++k) gvals(k) = peakedness_functional(problem, samples.draws.col(k));
  out.definition = static_cast<double>(problem.p()) * problem.tau() - gvals.mean() +
                   peakedness_functional(problem, m);
  const Vector grad_g = 2.0 * g * m + lambda * sign;
  const Vector series = gvals - samples.draws.transpose() * grad_g;
  out.definition_se = mc_standard_error(series);
  return out;
}

/// (1/n)||y - X m||^2 - sigma^2 + (2 sigma^2 / (n tau)) tr(Sigma Cov).
inline double ewa_sure(const RegressionProblem& problem, const EwaEstimate& ewa) {
  require_same_size(problem.p(), ewa.mean.size(), "ewa_sure: mean");
  require(ewa.covariance.rows() == problem.p() && ewa.covariance.cols() == problem.p(),
          "ewa_sure: covariance has the wrong shape");
  const double n = static_cast<double>(problem.n());
  const double s2 = problem.sigma() * problem.sigma();
  const double rss = (problem.response() - problem.design() * ewa.mean).squaredNorm() / n;
  const double spread = (problem.gram() * ewa.covariance).trace();
  return rss - s2 + 2.0 * s2 * spread / (n * problem.tau());
}

/// (1/n) int ||X(u - m)||^2 <= p tau, with 3 Monte Carlo standard errors of slack.
inline BoundReport check_variance_bound(const RegressionProblem& problem, const SampleSet& samples) {
  const Vector mean = samples.draws.rowwise().mean();
  const Matrix fitted = problem.design() * (samples.draws.colwise() - mean);
  const Vector series = fitted.colwise().squaredNorm().transpose() / static_cast<double>(problem.n());
  return BoundReport::make("variance_bound", series.mean(),
                           static_cast<double>(problem.p()) * problem.tau(),
                           3.0 * mc_standard_error(series));
}

/// int V <= p tau + V(probe) - (1/2n) int ||X(u - probe)||^2.
inline BoundReport check_potential_inequality(const RegressionProblem& problem, const SampleSet& samples,
                                              const Coefficients& probe) {
  const double n = static_cast<double>(problem.n());
  const Index count = samples.size();
  Vector series(count);
  for (Index k = 0; k < count; ++k) {
    const Coefficients u = samples.draws.col(k);
    series(k) = potential(problem, u) + (problem.design() * (u - probe)).squaredNorm() / (2.0 * n);
  }
  return BoundReport::make("potential_inequality", series.mean(),
                           static_cast<double>(problem.p()) * problem.tau() + potential(problem, probe),
                           3.0 * mc_standard_error(series));
}

namespace detail {

// Frequency with which `violated` holds, against a bound on that frequency.
inline BoundReport frequency_report(std::string name, const std::vector<bool>& violated, double bound,
                                    double effective_size) {
  double hits = 0.0;
  for (bool v : violated) hits += v ? 1.0 : 0.0;
  const double freq = violated.empty() ? 0.0 : hits / static_cast<double>(violated.size());
  const double q = std::clamp(bound, 0.0, 1.0);
  const double se = std::sqrt(q * (1.0 - q) / std::max(effective_size, 1.0));
  return BoundReport::make(std::move(name), freq, bound, 3.0 * se);
}

}  // namespace detail

/// Bobkov-type concentration: the frequency of V_n(beta) > int V_n + tau sqrt(p) t
/// is at most 2 exp(-t/16).
inline BoundReport check_concentration(const RegressionProblem& problem, const SampleSet& samples, double t) {
  require(t > 0.0, "check_concentration: t must be > 0");
  const Index count = samples.size();
  Vector v(count);
  for (Index k = 0; k < count; ++k) v(k) = potential(problem, samples.draws.col(k));
  const double level = v.mean() + problem.tau() * std::sqrt(static_cast<double>(problem.p())) * t;
  std::vector<bool> violated(static_cast<std::size_t>(count));
  for (Index k = 0; k < count; ++k) violated[static_cast<std::size_t>(k)] = v(k) > level;
  auto report = detail::frequency_report("concentration", violated, 2.0 * std::exp(-t / 16.0),
                                         effective_sample_size(v));
  report.context["t"] = std::to_string(t);
  return report;
}

/// Posterior concentration event at beta_bar = truth, J = support(truth):
/// loss(beta, truth) <= 9 lambda^2 |J| / (2 kappa) + 8 p tau. Reports the
/// violation frequency against 2 exp(-sqrt(p)/16).
inline BoundReport check_concentration_event(const RegressionProblem& problem, const SampleSet& samples,
                                             const Coefficients& truth, double kappa) {
  require(kappa > 0.0, "check_concentration_event: kappa must be > 0");
  Index support = 0;
  for (Index j = 0; j < truth.size(); ++j) support += truth(j) != 0.0 ? 1 : 0;
  const double p = static_cast<double>(problem.p());
  const double lambda = problem.lambda();
  const double rhs = 9.0 * lambda * lambda * static_cast<double>(support) / (2.0 * kappa) + 8.0 * p * problem.tau();
  const Index count = samples.size();
  std::vector<bool> violated(static_cast<std::size_t>(count));
  Vector losses(count);
  for (Index k = 0; k < count; ++k) {
    losses(k) = prediction_loss(problem, samples.draws.col(k), truth);
    violated[static_cast<std::size_t>(k)] = losses(k) > rhs;
  }
  auto report = detail::frequency_report("concentration_event", violated, 2.0 * std::exp(-std::sqrt(p) / 16.0),
                                         effective_sample_size(losses));
  report.context["loss_bound"] = std::to_string(rhs);
  return report;
}

}  // namespace ewa

#endif  // EWA_SAMPLER_HPP
