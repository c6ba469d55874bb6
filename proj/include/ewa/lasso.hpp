#ifndef EWA_LASSO_HPP
#define EWA_LASSO_HPP

#include "ewa/core.hpp"
#include "ewa/model.hpp"

#include <cmath>
#include <vector>

namespace ewa {

struct LassoFit {
  Coefficients coefficients;
  std::vector<Index> active_set;
  Index iterations = 0;
  bool converged = false;
  /// Primal minus dual objective. For lambda = 0 this holds the KKT residual
  /// max_j |x_j^T (y - X beta)| / n instead, since the dual is degenerate.
  double duality_gap = 0.0;
};

struct LassoOptions {
  double tol = 1e-12;
  Index max_iter = 100000;
  /// Optional warm start; empty means zero.
  Coefficients warm_start;
};

namespace detail {

inline double lasso_duality_gap(const RegressionProblem& problem, const Coefficients& beta,
                                const Vector& grad) {
  const double n = static_cast<double>(problem.n());
  const Vector r = problem.response() - problem.design() * beta;
  const double primal = r.squaredNorm() / (2.0 * n) + problem.lambda() * beta.lpNorm<1>();
  const double g_inf = grad.lpNorm<Eigen::Infinity>();
  const double s = g_inf > problem.lambda() ? problem.lambda() / g_inf : 1.0;
  const double dual =
      (problem.response().squaredNorm() - (problem.response() - s * r).squaredNorm()) / (2.0 * n);
  return std::max(primal - dual, 0.0);
}

}  // namespace detail

/// Lasso by cyclic coordinate descent on the cached Gram matrix.
///
/// Coordinates are visited in index order every sweep, so the result is a
/// deterministic function of the inputs.
inline LassoFit fit_lasso(const RegressionProblem& problem, const LassoOptions& options = {}) {
  require(options.max_iter >= 1, "fit_lasso: max_iter must be >= 1");
  require(options.tol > 0.0, "fit_lasso: tol must be > 0");
  const Index p = problem.p();
  const double n = static_cast<double>(problem.n());
  const double lambda = problem.lambda();
  const Matrix gram = problem.gram();
  const Vector xty = problem.design().transpose() * problem.response() / n;

  LassoFit fit;
  fit.coefficients = Coefficients::Zero(p);
  if (options.warm_start.size() > 0) {
    require_same_size(p, options.warm_start.size(), "fit_lasso: warm start");
    fit.coefficients = options.warm_start;
  }
  Coefficients& beta = fit.coefficients;
  // grad = X^T (y - X beta) / n
  Vector grad = xty - gram * beta;

  for (Index it = 1; it <= options.max_iter; ++it) {
    for (Index j = 0; j < p; ++j) {
      const double d = gram(j, j);
      if (d <= 0.0) {
        beta(j) = 0.0;
        continue;
      }
      const double updated = soft_threshold(d * beta(j) + grad(j), lambda) / d;
      const double delta = updated - beta(j);
      if (delta != 0.0) {
        beta(j) = updated;
        grad.noalias() -= gram.col(j) * delta;
      }
    }
    fit.iterations = it;
    // Refresh against drift of the incremental update.
    if (it % 64 == 0) grad = xty - gram * beta;
    if (lambda > 0.0) {
      fit.duality_gap = detail::lasso_duality_gap(problem, beta, grad);
    } else {
      fit.duality_gap = grad.lpNorm<Eigen::Infinity>();
    }
    if (fit.duality_gap <= options.tol) {
      fit.converged = true;
      break;
    }
  }
  for (Index j = 0; j < p; ++j) {
    if (beta(j) != 0.0) fit.active_set.push_back(j);
  }
  return fit;
}

inline LassoFit fit_lasso(const RegressionProblem& problem, double tol, Index max_iter) {
  LassoOptions options;
  options.tol = tol;
  options.max_iter = max_iter;
  return fit_lasso(problem, options);
}

/// rank of the columns of X indexed by `active`.
inline Index active_rank(const Matrix& design, const std::vector<Index>& active) {
  if (active.empty()) return 0;
  Matrix sub(design.rows(), static_cast<Index>(active.size()));
  for (std::size_t k = 0; k < active.size(); ++k) sub.col(static_cast<Index>(k)) = design.col(active[k]);
  return numerical_rank(sub);
}

/// (1/n) ||y - X beta||^2 - sigma^2 + (2 sigma^2 / n) rank(X_A).
inline double lasso_sure(const RegressionProblem& problem, const LassoFit& fit) {
  require_same_size(problem.p(), fit.coefficients.size(), "lasso_sure: coefficients");
  const double n = static_cast<double>(problem.n());
  const double s2 = problem.sigma() * problem.sigma();
  const double rss = (problem.response() - problem.design() * fit.coefficients).squaredNorm();
  const double df = static_cast<double>(active_rank(problem.design(), fit.active_set));
  return rss / n - s2 + 2.0 * s2 * df / n;
}

}  // namespace ewa

#endif  // EWA_LASSO_HPP
