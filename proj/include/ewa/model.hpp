#ifndef EWA_MODEL_HPP
#define EWA_MODEL_HPP

#include "ewa/core.hpp"

#include <Eigen/SVD>

#include <cmath>

namespace ewa {

/// (1/n) ||X (a - b)||^2
inline double prediction_loss(const RegressionProblem& problem, const Coefficients& a,
                              const Coefficients& b) {
  require_same_size(problem.p(), a.size(), "prediction_loss: a");
  require_same_size(problem.p(), b.size(), "prediction_loss: b");
  return (problem.design() * (a - b)).squaredNorm() / static_cast<double>(problem.n());
}

/// V_n(beta) = (1/2n) ||y - X beta||^2 + lambda ||beta||_1
inline double potential(const RegressionProblem& problem, const Coefficients& beta) {
  require_same_size(problem.p(), beta.size(), "potential: beta");
  const double n = static_cast<double>(problem.n());
  return (problem.response() - problem.design() * beta).squaredNorm() / (2.0 * n) +
         problem.lambda() * beta.lpNorm<1>();
}

/// G(u) = (1/n) ||X u||^2 + lambda ||u||_1, the convex functional whose Jensen
/// gap under the pseudo-posterior defines H(tau).
inline double peakedness_functional(const RegressionProblem& problem, const Coefficients& u) {
  require_same_size(problem.p(), u.size(), "peakedness_functional: u");
  const double n = static_cast<double>(problem.n());
  return (problem.design() * u).squaredNorm() / n + problem.lambda() * u.lpNorm<1>();
}

/// Smallest lambda satisfying lambda >= 2 sigma sqrt((2/n) log(p/delta)).
inline double calibrate_lambda(double sigma, Index n, Index p, double delta) {
  require(delta > 0.0 && delta < 1.0, "calibrate_lambda: delta must lie in (0, 1)");
  require(sigma >= 0.0, "calibrate_lambda: sigma must be >= 0");
  require(n >= 1 && p >= 1, "calibrate_lambda: n and p must be >= 1");
  const double log_term = std::log(static_cast<double>(p) / delta);
  return 2.0 * sigma * std::sqrt(2.0 / static_cast<double>(n) * std::max(log_term, 0.0));
}

/// Same condition with a real-valued dimension in the log term.
inline double calibrate_lambda_real_dim(double sigma, Index n, double p, double delta) {
  require(delta > 0.0 && delta < 1.0, "calibrate_lambda: delta must lie in (0, 1)");
  require(sigma >= 0.0 && p > 0.0 && n >= 1, "calibrate_lambda: bad arguments");
  return 2.0 * sigma *
         std::sqrt(2.0 / static_cast<double>(n) * std::max(std::log(p / delta), 0.0));
}

/// Relative singular-value cutoff for pseudoinverses and rank decisions.
inline constexpr double kRankCutoff = 1e-10;

/// Minimum-norm least squares X^+ y, which equals (1/n) Sigma^+ X^T y.
inline Coefficients least_squares(const Matrix& design, const Vector& response) {
  require_same_size(design.rows(), response.size(), "least_squares: response");
  Eigen::BDCSVD<Matrix> svd(design, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  const double cutoff = s.size() > 0 ? kRankCutoff * s(0) : 0.0;
  Vector coef = svd.matrixU().transpose() * response;
  for (Index k = 0; k < s.size(); ++k) coef(k) = s(k) > cutoff ? coef(k) / s(k) : 0.0;
  return svd.matrixV() * coef;
}

inline Coefficients least_squares(const RegressionProblem& problem) {
  return least_squares(problem.design(), problem.response());
}

/// Numerical rank with cutoff kRankCutoff * largest singular value.
inline Index numerical_rank(const Matrix& a) {
  if (a.size() == 0) return 0;
  Eigen::BDCSVD<Matrix> svd(a);
  const Vector& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0;
  Index r = 0;
  for (Index k = 0; k < s.size(); ++k) r += s(k) > kRankCutoff * s(0) ? 1 : 0;
  return r;
}

/// True when X^T X / n is the identity up to `tol` entrywise.
inline bool is_orthonormal(const RegressionProblem& problem, double tol = 1e-9) {
  const Matrix g = problem.gram();
  return (g - Matrix::Identity(g.rows(), g.cols())).cwiseAbs().maxCoeff() <= tol;
}

/// Rescales every column so that ||x^j||^2 = n. Zero columns are left alone.
/// Returns the scaled design and the per-column factors that were applied.
inline std::pair<Matrix, Vector> rescale_columns(const Matrix& design) {
  const double n = static_cast<double>(design.rows());
  Vector factors(design.cols());
  Matrix scaled = design;
  for (Index j = 0; j < design.cols(); ++j) {
    const double norm = design.col(j).norm();
    factors(j) = norm > 0.0 ? std::sqrt(n) / norm : 1.0;
    scaled.col(j) *= factors(j);
  }
  return {std::move(scaled), std::move(factors)};
}

}  // namespace ewa

#endif  // EWA_MODEL_HPP
