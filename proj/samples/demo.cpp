// Sparse regression on a random orthonormal design: lasso, closed-form EWA
// and sampled EWA side by side, followed by a small trace-regression fit.

#include "ewa/ewa.hpp"

#include <cstdio>

int main() {
  using namespace ewa;
  Engine rng = make_engine(2024);
  NormalSource normal;

  const Index n = 100, p = 20;
  const Matrix x = std::sqrt(static_cast<double>(n)) * random_orthonormal_columns(rng, n, p);
  Coefficients truth = Coefficients::Zero(p);
  truth.head(3) << 1.0, -1.0, 0.5;
  const Vector y = x * truth + normal.vector(rng, n);
  const double lambda = calibrate_lambda(1.0, n, p, 0.05);
  const RegressionProblem problem(x, y, 1.0, lambda, 1.0 / (n * p));

  const LassoFit lasso = fit_lasso(problem);
  const EwaEstimate closed =
      ewa_closed_form({problem.tau(), lambda, x.transpose() * y / static_cast<double>(n)});
  SamplerConfig config;
  config.seed = 7;
  const EwaEstimate sampled = ewa_from_samples(sample_posterior(problem, config));

  std::printf("lambda = %.4f, tau = %.2e\n", lambda, problem.tau());
  std::printf("%4s %10s %10s %10s %10s\n", "j", "truth", "lasso", "ewa", "sampled");
  for (Index j = 0; j < 6; ++j) {
    std::printf("%4ld %10.4f %10.4f %10.4f %10.4f\n", static_cast<long>(j), truth(j), lasso.coefficients(j),
                closed.mean(j), sampled.mean(j));
  }
  std::printf("loss: lasso %.5f, ewa %.5f\n", prediction_loss(problem, lasso.coefficients, truth),
              prediction_loss(problem, closed.mean, truth));
  std::printf("H(tau) = %.3e <= p tau = %.3e\n", closed.h_value, p * problem.tau());
  std::printf("risk estimates: lasso %.5f, ewa %.5f\n", lasso_sure(problem, lasso), ewa_sure(problem, closed));

  const Index m = 6, obs = 120;
  const Matrix rows = entry_sampling_design(rng, obs, m, m);
  const Matrix b = random_orthonormal_columns(rng, m, 1) * random_orthonormal_columns(rng, m, 1).transpose();
  const Vector yt = rows * vec(2.0 * b) + 0.5 * normal.vector(rng, obs);
  const double lt = calibrate_lambda_matrix(0.5, v_x(rows, m, m), obs, m, m, 0.05);
  const TraceProblem trace(rows, yt, m, m, 0.5, lt, 0.25 / (obs * m * m));
  const MatrixEstimate fit = fit_nnp_ls(trace);
  std::printf("trace regression: leading singular values %.3f %.3f %.3f, loss %.4f\n", fit.singular_values(0),
              fit.singular_values(1), fit.singular_values(2), trace_loss(trace, fit.matrix, 2.0 * b));
  return 0;
}
