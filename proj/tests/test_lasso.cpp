#include "ewa/lasso.hpp"
#include "ewa/random.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace {

using namespace ewa;

Matrix gaussian(Engine& rng, Index n, Index p) {
  NormalSource normal;
  Matrix x(n, p);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < p; ++j) x(i, j) = normal(rng);
  return x;
}

TEST(Lasso, UnpenalisedSquareSystem) {
  Engine rng = make_engine(1);
  NormalSource normal;
  const Matrix x = gaussian(rng, 4, 4) + 4.0 * Matrix::Identity(4, 4);
  const Vector y = normal.vector(rng, 4);
  const auto fit = fit_lasso(RegressionProblem(x, y, 1.0, 0.0, 1.0));
  EXPECT_TRUE(fit.converged);
  EXPECT_LT((fit.coefficients - x.lu().solve(y)).norm(), 1e-9);
}

TEST(Lasso, OrthonormalDesignIsSoftThresholding) {
  // X = sqrt(n) I so that X^T X / n = I and z = X^T y / n = (2, 0.5).
  const double n = 2.0;
  const Matrix x = std::sqrt(n) * Matrix::Identity(2, 2);
  Vector y(2);
  y << 2.0 * std::sqrt(n), 0.5 * std::sqrt(n);
  const RegressionProblem problem(x, y, 1.0, 1.0, 1.0);
  const auto fit = fit_lasso(problem);
  EXPECT_NEAR(fit.coefficients(0), 1.0, 1e-12);
  EXPECT_EQ(fit.coefficients(1), 0.0);
  ASSERT_EQ(fit.active_set.size(), 1u);
  // Grid search over V_n.
  double best = potential(problem, fit.coefficients);
  for (double a = -1.0; a <= 3.0; a += 0.01)
    for (double b = -1.0; b <= 1.0; b += 0.01) {
      Coefficients beta(2);
      beta << a, b;
      EXPECT_GE(potential(problem, beta), best - 1e-12);
    }
}

TEST(Lasso, LargePenaltyGivesZero) {
  Engine rng = make_engine(2);
  NormalSource normal;
  const Matrix x = gaussian(rng, 20, 8);
  const Vector y = normal.vector(rng, 20);
  const double threshold = (x.transpose() * y / 20.0).lpNorm<Eigen::Infinity>();
  const RegressionProblem problem(x, y, 1.0, threshold, 1.0);
  const auto fit = fit_lasso(problem);
  EXPECT_EQ(fit.coefficients.norm(), 0.0);
  EXPECT_TRUE(fit.active_set.empty());
  for (int k = 0; k < 100; ++k) {
    EXPECT_LE(potential(problem, Coefficients::Zero(8)), potential(problem, 0.1 * normal.vector(rng, 8)));
  }
}

TEST(Lasso, KktAndProbeOptimality) {
  Engine rng = make_engine(3);
  NormalSource normal;
  for (int rep = 0; rep < 10; ++rep) {
    const Index n = 30, p = 12;
    const Matrix x = rescale_columns(gaussian(rng, n, p)).first;
    Coefficients truth = Coefficients::Zero(p);
    truth.head(3) << 1.0, -2.0, 0.5;
    const Vector y = x * truth + 0.5 * normal.vector(rng, n);
    const double lambda = calibrate_lambda(0.5, n, p, 0.05);
    const RegressionProblem problem(x, y, 0.5, lambda, 1.0);
    const auto fit = fit_lasso(problem);
    ASSERT_TRUE(fit.converged);
    EXPECT_GE(fit.duality_gap, 0.0);
    EXPECT_LE(fit.duality_gap, 1e-12);
    const Vector grad = x.transpose() * (y - x * fit.coefficients) / static_cast<double>(n);
    const double tol = 1e-6;
    for (Index j = 0; j < p; ++j) {
      EXPECT_LE(std::abs(grad(j)), lambda + tol);
      if (fit.coefficients(j) != 0.0) {
        EXPECT_NEAR(grad(j), lambda * sign_of(fit.coefficients(j)), tol);
      }
    }
    const double v = potential(problem, fit.coefficients);
    for (int k = 0; k < 100; ++k) {
      const Coefficients probe = fit.coefficients + std::pow(10.0, -static_cast<double>(k % 5)) * normal.vector(rng, p);
      EXPECT_LE(v, potential(problem, probe) + 1e-12);
    }
  }
}

TEST(Lasso, DeterministicAndWarmStartConsistent) {
  Engine rng = make_engine(4);
  NormalSource normal;
  const Matrix x = gaussian(rng, 15, 6);
  const RegressionProblem problem(x, normal.vector(rng, 15), 1.0, 0.2, 1.0);
  const auto a = fit_lasso(problem);
  const auto b = fit_lasso(problem);
  EXPECT_EQ(a.coefficients, b.coefficients);
  LassoOptions warm;
  warm.warm_start = Coefficients::Ones(6);
  EXPECT_LT((fit_lasso(problem, warm).coefficients - a.coefficients).norm(), 1e-6);
}

TEST(Lasso, NonConvergenceIsReported) {
  Engine rng = make_engine(5);
  NormalSource normal;
  const Matrix x = gaussian(rng, 15, 6);
  const auto fit = fit_lasso(RegressionProblem(x, normal.vector(rng, 15), 1.0, 0.01, 1.0), 1e-300, 1);
  EXPECT_FALSE(fit.converged);
  EXPECT_EQ(fit.iterations, 1);
  EXPECT_THROW(fit_lasso(RegressionProblem(x, normal.vector(rng, 15), 1.0, 0.01, 1.0), 1e-9, 0),
               InvalidArgument);
}

TEST(LassoSure, DegenerateCases) {
  const RegressionProblem zero(Matrix::Identity(3, 3), Vector::Zero(3), 2.0, 1.0, 1.0);
  EXPECT_DOUBLE_EQ(lasso_sure(zero, fit_lasso(zero)), -4.0);
  Vector y(3);
  y << 1.0, -2.0, 0.5;
  const RegressionProblem huge(Matrix::Identity(3, 3), y, 1.0, 1e6, 1.0);
  EXPECT_DOUBLE_EQ(lasso_sure(huge, fit_lasso(huge)), y.squaredNorm() / 3.0 - 1.0);
}

TEST(LassoSure, RankUsesActiveColumns) {
  Matrix x(4, 3);
  x << 1, 1, 0, 1, 1, 1, 1, 1, 0, 1, 1, 1;
  EXPECT_EQ(active_rank(x, {0, 1}), 1);
  EXPECT_EQ(active_rank(x, {0, 2}), 2);
  EXPECT_EQ(active_rank(x, {}), 0);
}

TEST(LassoSure, MonteCarloUnbiased) {
  Engine rng = make_engine(6);
  NormalSource normal;
  const Index n = 50, p = 10;
  const Matrix x = std::sqrt(static_cast<double>(n)) * random_orthonormal_columns(rng, n, p);
  Coefficients truth = Coefficients::Zero(p);
  truth.head(3) << 0.6, -0.4, 0.25;
  const double sigma = 1.0;
  const double lambda = calibrate_lambda(sigma, n, p, 0.3);
  const int reps = 2000;
  double sum_diff = 0.0, sum_diff2 = 0.0;
  for (int r = 0; r < reps; ++r) {
    const Vector y = x * truth + sigma * normal.vector(rng, n);
    const RegressionProblem problem(x, y, sigma, lambda, 1.0);
    const auto fit = fit_lasso(problem);
    const double d = lasso_sure(problem, fit) - prediction_loss(problem, fit.coefficients, truth);
    sum_diff += d;
    sum_diff2 += d * d;
  }
  const double mean = sum_diff / reps;
  const double se = std::sqrt((sum_diff2 / reps - mean * mean) / reps);
  EXPECT_LE(std::abs(mean), 3.0 * se);
}

}  // namespace
