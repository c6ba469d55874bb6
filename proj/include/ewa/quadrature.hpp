#ifndef EWA_QUADRATURE_HPP
#define EWA_QUADRATURE_HPP

#include "ewa/core.hpp"
#include "ewa/lasso.hpp"
#include "ewa/model.hpp"

#include <Eigen/Eigenvalues>

#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace ewa {

/// Tensor-product rule for the brute-force integrator.
///
/// Each axis of the box is cut at 0, where the density has a kink, and each
/// piece is split into equal panels carrying a Gauss-Legendre rule. Inside one
/// orthant the integrand is smooth, so the rule converges geometrically as the
/// panels are halved.
struct QuadratureGrid {
  /// Empty means: choose automatically around the lasso fit.
  std::vector<std::pair<double, double>> bounds;
  /// Panels per piece on the first level; doubled at each refinement.
  Index panels = 2;
  /// Gauss-Legendre nodes per panel.
  Index order = 16;
  /// Refinement stops once every normalised integral moves by less than
  /// tol * max(1, |value|) between two levels.
  double tol = 1e-10;
  /// Hard cap on the number of density evaluations at one level.
  double max_points = 3.0e7;
};

using Functional = std::function<double(const Coefficients&)>;

struct QuadratureResult {
  EwaEstimate estimate;
  double mean_g = 0.0;  // integral of G
  double mean_v = 0.0;  // integral of V_n
  /// log of the integral of exp(-V_n / tau).
  double log_normaliser = 0.0;
  std::vector<double> functionals;
  std::vector<std::pair<double, double>> bounds;
  Index nodes_per_axis = 0;
  Index levels = 0;
  double last_change = 0.0;
  bool converged = false;
};

namespace detail {

struct DensityModel {
  Matrix gram;
  Vector grad_center;  // gram * center - X^T y / n
  Coefficients center;
  Vector xty;          // X^T y / n
  double half_yy;      // ||y||^2 / 2n
  double lambda;
  double tau;
  double center_l1;

  // (V_n(center + d) - V_n(center)) / tau
  double scaled_excess(const Coefficients& beta, const Vector& d) const {
    const double quad = 0.5 * d.dot(gram * d) + grad_center.dot(d);
    return (quad + lambda * (beta.lpNorm<1>() - center_l1)) / tau;
  }
};

inline DensityModel make_density_model(const RegressionProblem& problem,
                                       const Coefficients& center) {
  DensityModel m;
  m.gram = problem.gram();
  const double n = static_cast<double>(problem.n());
  m.grad_center = m.gram * center - problem.design().transpose() * problem.response() / n;
  m.center = center;
  m.xty = problem.design().transpose() * problem.response() / n;
  m.half_yy = problem.response().squaredNorm() / (2.0 * n);
  m.lambda = problem.lambda();
  m.tau = problem.tau();
  m.center_l1 = center.lpNorm<1>();
  return m;
}

/// Gauss-Legendre nodes and weights on [-1, 1] (Golub-Welsch).
inline std::pair<Vector, Vector> gauss_legendre(Index order) {
  Matrix jacobi = Matrix::Zero(order, order);
  for (Index k = 1; k < order; ++k) {
    const double kk = static_cast<double>(k);
    jacobi(k, k - 1) = jacobi(k - 1, k) = kk / std::sqrt(4.0 * kk * kk - 1.0);
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(jacobi);
  Vector nodes = eig.eigenvalues();
  Vector weights = 2.0 * eig.eigenvectors().row(0).transpose().array().square();
  // Symmetrise against eigensolver round-off.
  for (Index k = 0; k < order / 2; ++k) {
    const Index m = order - 1 - k;
    const double x = 0.5 * (nodes(m) - nodes(k));
    const double w = 0.5 * (weights(m) + weights(k));
    nodes(k) = -x;
    nodes(m) = x;
    weights(k) = weights(m) = w;
  }
  if (order % 2 == 1) nodes(order / 2) = 0.0;
  return {nodes, weights};
}

struct AxisRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

// Panels on one piece whose end `kink` touches 0. The panel next to the kink
// is graded geometrically down to kink_scale, the decay length of the l1 term.
inline std::vector<std::pair<double, double>> piece_panels(double a, double b, Index panels,
                                                           double kink_scale, bool kink_at_a) {
  std::vector<std::pair<double, double>> out;
  const double width = (b - a) / static_cast<double>(panels);
  for (Index k = 0; k < panels; ++k) {
    out.emplace_back(a + static_cast<double>(k) * width,
                     k + 1 == panels ? b : a + static_cast<double>(k + 1) * width);
  }
  if (kink_scale <= 0.0 || width <= kink_scale) return out;
  const int grades = std::min(60, static_cast<int>(std::ceil(std::log2(width / kink_scale))));
  std::vector<std::pair<double, double>> graded;
  double edge = width;
  for (int g = 0; g < grades; ++g) {
    graded.emplace_back(0.5 * edge, edge);
    edge *= 0.5;
  }
  graded.emplace_back(0.0, edge);
  if (kink_at_a) {
    out.erase(out.begin());
    for (const auto& [lo, hi] : graded) out.emplace_back(a + lo, a + hi);
  } else {
    out.pop_back();
    for (const auto& [lo, hi] : graded) out.emplace_back(b - hi, b - lo);
  }
  return out;
}

inline AxisRule make_axis_rule(double lo, double hi, Index panels, double kink_scale,
                               const Vector& gl_nodes, const Vector& gl_weights) {
  std::vector<std::pair<double, double>> cells;
  const auto append = [&](const std::vector<std::pair<double, double>>& v) {
    cells.insert(cells.end(), v.begin(), v.end());
  };
  if (lo < 0.0 && hi > 0.0) {
    append(piece_panels(lo, 0.0, panels, kink_scale, false));
    append(piece_panels(0.0, hi, panels, kink_scale, true));
  } else if (lo == 0.0) {
    append(piece_panels(lo, hi, panels, kink_scale, true));
  } else if (hi == 0.0) {
    append(piece_panels(lo, hi, panels, kink_scale, false));
  } else {
    append(piece_panels(lo, hi, panels, 0.0, true));
  }
  AxisRule rule;
  for (const auto& [a, b] : cells) {
    const double w = b - a;
    for (Index q = 0; q < gl_nodes.size(); ++q) {
      rule.nodes.push_back(a + 0.5 * w * (gl_nodes(q) + 1.0));
      rule.weights.push_back(0.5 * w * gl_weights(q));
    }
  }
  return rule;
}

// Weighted sums of every integrand component on one tensor rule.
// Component layout: [1, d_1..d_p, d_i d_j (i <= j), G, V, user functionals].
inline std::vector<double> integrate_level(const DensityModel& model, const std::vector<AxisRule>& axes,
                                           const std::vector<Functional>& user) {
  const Index p = static_cast<Index>(axes.size());
  const Index pairs = p * (p + 1) / 2;
  const std::size_t width = static_cast<std::size_t>(1 + p + pairs) + 2 + user.size();
  std::vector<double> total(width, 0.0);
  std::vector<double> line(width, 0.0);
  std::array<std::size_t, 3> idx{};
  Coefficients beta(p);
  Vector delta(p);

  for (;;) {
    std::fill(line.begin(), line.end(), 0.0);
    double outer = 1.0;
    for (Index d = 1; d < p; ++d) {
      beta(d) = axes[d].nodes[idx[d]];
      outer *= axes[d].weights[idx[d]];
    }
    for (std::size_t i0 = 0; i0 < axes[0].nodes.size(); ++i0) {
      beta(0) = axes[0].nodes[i0];
      delta = beta - model.center;
      const double f = axes[0].weights[i0] * std::exp(-model.scaled_excess(beta, delta));
      if (f == 0.0) continue;
      std::size_t k = 0;
      line[k++] += f;
      for (Index i = 0; i < p; ++i) line[k++] += f * delta(i);
      for (Index i = 0; i < p; ++i)
        for (Index j = i; j < p; ++j) line[k++] += f * delta(i) * delta(j);
      const double quad = beta.dot(model.gram * beta);
      const double l1 = beta.lpNorm<1>();
      line[k++] += f * (quad + model.lambda * l1);
      line[k++] += f * (0.5 * quad - model.xty.dot(beta) + model.half_yy + model.lambda * l1);
      for (const Functional& fn : user) line[k++] += f * fn(beta);
    }
    for (std::size_t k = 0; k < width; ++k) total[k] += outer * line[k];
    Index d = 1;
    for (; d < p; ++d) {
      if (++idx[d] < axes[d].nodes.size()) break;
      idx[d] = 0;
    }
    if (d >= p) break;
  }
  return total;
}

// Normalised quantities from raw integrals: divide everything by the mass.
inline std::vector<double> normalise(const std::vector<double>& raw) {
  std::vector<double> out(raw.size());
  out[0] = raw[0];
  for (std::size_t k = 1; k < raw.size(); ++k) out[k] = raw[k] / raw[0];
  return out;
}

inline double max_boundary_density(const DensityModel& model,
                                   const std::vector<std::pair<double, double>>& bounds,
                                   Index per_axis) {
  const Index p = static_cast<Index>(bounds.size());
  double worst = 0.0;
  Coefficients beta(p);
  std::array<Index, 3> idx{};
  for (;;) {
    bool on_face = false;
    for (Index d = 0; d < p; ++d) {
      const double t = static_cast<double>(idx[d]) / static_cast<double>(per_axis);
      beta(d) = bounds[d].first + t * (bounds[d].second - bounds[d].first);
      if (idx[d] == 0 || idx[d] == per_axis) on_face = true;
    }
    if (on_face) {
      worst = std::max(worst, std::exp(-model.scaled_excess(beta, beta - model.center)));
    }
    Index d = 0;
    for (; d < p; ++d) {
      if (++idx[d] <= per_axis) break;
      idx[d] = 0;
    }
    if (d >= p) break;
  }
  return worst;
}

}  // namespace detail

/// Integration box: lasso fit +- 12 marginal scales per axis, doubled until the
/// density on the boundary is below 1e-16 of its peak. Zero coordinates of the
/// fit are also confined by the l1 term, which sets a second scale.
inline std::vector<std::pair<double, double>> automatic_bounds(const RegressionProblem& problem,
                                                               const Coefficients& center) {
  const Index p = problem.p();
  const Matrix gram = problem.gram();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
  const double top = std::max(eig.eigenvalues().maxCoeff(), 1e-300);
  double floor = 1e-6 * top;
  if (problem.lambda() > 0.0) {
    // Directions the data leave flat are still confined by the l1 term at scale tau/lambda.
    floor = std::max(floor, problem.lambda() * problem.lambda() / (144.0 * problem.tau()));
  }
  const Matrix precision = gram + floor * Matrix::Identity(p, p);
  const Matrix cov = precision.inverse();
  std::vector<std::pair<double, double>> bounds(static_cast<std::size_t>(p));
  for (Index d = 0; d < p; ++d) {
    const double half = 12.0 * std::sqrt(problem.tau() * cov(d, d));
    bounds[d] = {center(d) - half, center(d) + half};
  }
  const detail::DensityModel model = detail::make_density_model(problem, center);
  for (int doubling = 0;; ++doubling) {
    if (detail::max_boundary_density(model, bounds, p == 3 ? 48 : 256) < 1e-16) break;
    if (doubling >= 40) throw NumericalError("quadrature: integration box did not close");
    for (Index d = 0; d < p; ++d) {
      const double mid = center(d);
      const double half = bounds[d].second - mid;
      bounds[d] = {mid - 2.0 * half, mid + 2.0 * half};
    }
  }
  return bounds;
}

/// Deterministic integration of the pseudo-posterior for p <= 3.
inline QuadratureResult oracle_integrate(const RegressionProblem& problem,
                                         const QuadratureGrid& grid = {},
                                         const std::vector<Functional>& user = {}) {
  const Index p = problem.p();
  require(p >= 1 && p <= 3, "quadrature: p must be <= 3");
  require(grid.panels >= 1, "quadrature: panels must be >= 1");
  require(grid.order >= 4 && grid.order <= 64, "quadrature: order must be in [4, 64]");
  require(grid.tol > 0.0, "quadrature: tol must be > 0");
  const LassoFit lasso = fit_lasso(problem);
  const Coefficients& center = lasso.coefficients;
  std::vector<std::pair<double, double>> bounds = grid.bounds;
  if (bounds.empty()) {
    bounds = automatic_bounds(problem, center);
  } else {
    require_same_size(p, static_cast<Index>(bounds.size()), "quadrature: bounds");
    for (const auto& b : bounds) {
      require(std::isfinite(b.first) && std::isfinite(b.second) && b.first < b.second,
              "quadrature: bounds must be finite and increasing");
    }
  }
  const detail::DensityModel model = detail::make_density_model(problem, center);
  const auto [gl_nodes, gl_weights] = detail::gauss_legendre(grid.order);
  const double kink_scale = problem.lambda() > 0.0 ? problem.tau() / problem.lambda() : 0.0;

  QuadratureResult result;
  std::vector<double> best, previous_best;
  for (Index panels = grid.panels;; panels *= 2) {
    std::vector<detail::AxisRule> axes;
    double count = 1.0;
    for (const auto& b : bounds) {
      axes.push_back(detail::make_axis_rule(b.first, b.second, panels, kink_scale, gl_nodes, gl_weights));
      count *= static_cast<double>(axes.back().nodes.size());
    }
    if (count > grid.max_points) break;
    previous_best = best;
    best = detail::normalise(detail::integrate_level(model, axes, user));
    ++result.levels;
    result.nodes_per_axis = static_cast<Index>(axes[0].nodes.size());
    if (previous_best.empty()) continue;
    double change = std::abs(best[0] - previous_best[0]) / std::abs(best[0]);
    for (std::size_t k = 1; k < best.size(); ++k) {
      change = std::max(change, std::abs(best[k] - previous_best[k]) / std::max(1.0, std::abs(best[k])));
    }
    result.last_change = change;
    if (change <= grid.tol) {
      result.converged = true;
      break;
    }
  }
  if (!result.converged) {
    throw NumericalError("quadrature: refinement did not converge (last change " +
                         std::to_string(result.last_change) + ")");
  }

  const Index pairs = p * (p + 1) / 2;
  Coefficients mean_delta(p);
  for (Index i = 0; i < p; ++i) mean_delta(i) = best[1 + i];
  Matrix second(p, p);
  std::size_t k = static_cast<std::size_t>(1 + p);
  for (Index i = 0; i < p; ++i)
    for (Index j = i; j < p; ++j) second(i, j) = second(j, i) = best[k++];
  EwaEstimate& est = result.estimate;
  est.method = Method::quadrature;
  result.log_normaliser = std::log(best[0]) - potential(problem, center) / problem.tau();
  est.mean = center + mean_delta;
  est.covariance = second - mean_delta * mean_delta.transpose();
  est.mc_std_error = Vector::Zero(p);
  result.mean_g = best[static_cast<std::size_t>(1 + p + pairs)];
  result.mean_v = best[static_cast<std::size_t>(2 + p + pairs)];
  for (std::size_t u = 0; u < user.size(); ++u) {
    result.functionals.push_back(best[static_cast<std::size_t>(3 + p + pairs) + u]);
  }
  est.h_value = static_cast<double>(p) * problem.tau() - result.mean_g +
                peakedness_functional(problem, est.mean);
  result.bounds = bounds;
  return result;
}

/// Posterior mean, covariance and H(tau) by direct integration.
inline EwaEstimate oracle_moments(const RegressionProblem& problem,
                                  const QuadratureGrid& grid = {}) {
  return oracle_integrate(problem, grid).estimate;
}

/// Integral of f against the pseudo-posterior.
inline double oracle_functional(const RegressionProblem& problem, const QuadratureGrid& grid,
                                const Functional& f) {
  return oracle_integrate(problem, grid, {f}).functionals.front();
}

}  // namespace ewa

#endif  // EWA_QUADRATURE_HPP
