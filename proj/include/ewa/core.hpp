#ifndef EWA_CORE_HPP
#define EWA_CORE_HPP

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>

namespace ewa {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// A coefficient vector of length p (beta, beta-star, estimates).
using Coefficients = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Errors. The CLI maps each family onto an exit code.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller supplied an argument outside the operation's domain.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Vector / matrix shapes do not agree.
class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

/// Input data could not be read or is malformed.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Divergence, non-convergence or an unrepresentable result.
class NumericalError : public Error {
 public:
  using Error::Error;
};

inline void require(bool condition, const std::string& what) {
  if (!condition) throw InvalidArgument(what);
}

inline void require_same_size(Index a, Index b, const std::string& what) {
  if (a != b) {
    throw DimensionMismatch(what + ": expected " + std::to_string(a) + ", got " +
                            std::to_string(b));
  }
}

// ---------------------------------------------------------------------------

/// Fixed design, response, noise level and tuning pair (lambda, tau).
///
/// Instances are immutable; the `with_*` helpers return modified copies.
class RegressionProblem {
 public:
  RegressionProblem(Matrix design, Vector response, double sigma, double lambda, double tau)
      : design_(std::move(design)),
        response_(std::move(response)),
        sigma_(sigma),
        lambda_(lambda),
        tau_(tau) {
    if (design_.rows() < 1 || design_.cols() < 1) {
      throw DimensionMismatch("design must have at least one row and one column");
    }
    require_same_size(design_.rows(), response_.size(), "response length");
    if (!design_.allFinite()) throw DataError("design contains non-finite entries");
    if (!response_.allFinite()) throw DataError("response contains non-finite entries");
    require(std::isfinite(sigma_) && sigma_ >= 0.0, "sigma must be finite and >= 0");
    require(std::isfinite(lambda_) && lambda_ >= 0.0, "lambda must be finite and >= 0");
    require(std::isfinite(tau_) && tau_ > 0.0, "tau must be finite and > 0");
    const double n = static_cast<double>(design_.rows());
    max_column_energy_ = design_.colwise().squaredNorm().maxCoeff() / n;
  }

  const Matrix& design() const { return design_; }
  const Vector& response() const { return response_; }
  double sigma() const { return sigma_; }
  double lambda() const { return lambda_; }
  double tau() const { return tau_; }
  Index n() const { return design_.rows(); }
  Index p() const { return design_.cols(); }

  /// max_j ||x^j||^2 / n
  double max_column_energy() const { return max_column_energy_; }

  /// True when max_j ||x^j||^2 / n <= 1 (equivalently ||x^j||^2 <= n).
  bool columns_scaled() const { return max_column_energy_ <= 1.0 + 1e-12; }

  /// X^T X / n
  Matrix gram() const { return design_.transpose() * design_ / static_cast<double>(n()); }

  RegressionProblem with_response(Vector y) const {
    return {design_, std::move(y), sigma_, lambda_, tau_};
  }
  RegressionProblem with_lambda(double lambda) const {
    return {design_, response_, sigma_, lambda, tau_};
  }
  RegressionProblem with_tau(double tau) const {
    return {design_, response_, sigma_, lambda_, tau};
  }

 private:
  Matrix design_;
  Vector response_;
  double sigma_;
  double lambda_;
  double tau_;
  double max_column_energy_ = 0.0;
};

// ---------------------------------------------------------------------------

/// Absolute plus relative slack applied to analytic inequalities.
inline constexpr double kNumericTolerance = 1e-10;

inline double numeric_tolerance(double lhs, double rhs) {
  return kNumericTolerance + kNumericTolerance * std::max(std::abs(lhs), std::abs(rhs));
}

/// One checked inequality lhs <= rhs.
///
/// `stochastic_slack` is zero for deterministic checks and a multiple of a
/// Monte Carlo / binomial standard error for frequency checks.
struct BoundReport {
  std::string name;
  double lhs = 0.0;
  double rhs = 0.0;
  double slack = 0.0;  // rhs - lhs
  double stochastic_slack = 0.0;
  bool passed = false;
  std::map<std::string, std::string> context;

  static BoundReport make(std::string name, double lhs, double rhs,
                          double stochastic_slack = 0.0,
                          std::map<std::string, std::string> context = {}) {
    BoundReport r;
    r.name = std::move(name);
    r.lhs = lhs;
    r.rhs = rhs;
    r.slack = rhs - lhs;
    r.stochastic_slack = stochastic_slack;
    // NaN slack compares false.
    r.passed = r.slack >= -(numeric_tolerance(lhs, rhs) + stochastic_slack);
    r.context = std::move(context);
    return r;
  }
};

/// Which computational route produced an estimate.
enum class Method { closed_form, quadrature, sampler };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::closed_form: return "closed-form";
    case Method::quadrature: return "quadrature";
    case Method::sampler: return "sampler";
  }
  return "unknown";
}

/// Pseudo-posterior mean with second-moment diagnostics.
struct EwaEstimate {
  Coefficients mean;
  Matrix covariance;
  double h_value = 0.0;
  double h_std_error = 0.0;
  Method method = Method::closed_form;
  Vector mc_std_error;  // zero for deterministic routes
};

/// Soft thresholding sign(z) max(|z| - c, 0). Ties at the threshold map to 0.
inline double soft_threshold(double z, double c) {
  if (z > c) return z - c;
  if (z < -c) return z + c;
  return 0.0;
}

inline double sign_of(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace ewa

#endif  // EWA_CORE_HPP
