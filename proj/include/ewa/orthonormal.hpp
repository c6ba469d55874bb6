#ifndef EWA_ORTHONORMAL_HPP
#define EWA_ORTHONORMAL_HPP

#include "ewa/core.hpp"
#include "ewa/special.hpp"

#include <cmath>
#include <vector>

namespace ewa {

/// Inputs of the closed-form EWA for a design with X^T X / n = I.
struct ShrinkageInputs {
  double tau = 1.0;
  double lambda = 1.0;
  Coefficients ls_coefficients;

  void validate() const {
    require(std::isfinite(tau) && tau > 0.0, "shrinkage: tau must be > 0");
    require(std::isfinite(lambda) && lambda > 0.0, "shrinkage: lambda must be > 0");
    if (!ls_coefficients.allFinite()) throw DataError("shrinkage: non-finite coefficients");
  }
};

namespace detail {

// D = log Psi_tau(lambda - t) - log Psi_tau(lambda + t) >= 0 for t >= 0.
inline double shrinkage_log_ratio(double tau, double lambda, double t) {
  return log_psi(tau, lambda - t) - log_psi(tau, lambda + t);
}

}  // namespace detail

/// w(tau, lambda, t) = (Psi(l - t) - Psi(l + t)) / (Psi(l - t) + Psi(l + t)).
inline double shrinkage_weight(double tau, double lambda, double t) {
  require(t >= 0.0, "shrinkage_weight: t must be >= 0");
  return std::tanh(0.5 * detail::shrinkage_log_ratio(tau, lambda, t));
}

/// 1 - w(tau, lambda, t), accurate when w is close to 1.
inline double shrinkage_complement(double tau, double lambda, double t) {
  require(t >= 0.0, "shrinkage_complement: t must be >= 0");
  const double d = detail::shrinkage_log_ratio(tau, lambda, t);
  return 2.0 / (1.0 + std::exp(d));
}

/// Mean and variance of the one-dimensional density proportional to
/// exp(-((x - b)^2 / 2 + lambda |x|) / tau).
struct ScalarMoments {
  double mean;
  double variance;
};

inline ScalarMoments scalar_posterior_moments(double tau, double lambda, double b) {
  const double s = std::sqrt(tau);
  const double a = lambda / s;
  const double c = b / s;
  // Positive part: c - a + Z with Z > a - c. Negative part: c + a - Z with Z > a + c.
  const double lp = log_psi(1.0, a - c);
  const double lm = log_psi(1.0, a + c);
  const double wp = 1.0 / (1.0 + std::exp(lm - lp));
  const double wm = 1.0 / (1.0 + std::exp(lp - lm));
  const TruncatedMoments tp = truncated_normal_moments(a - c);
  const TruncatedMoments tm = truncated_normal_moments(a + c);
  const double mp = c - a + tp.mean;
  const double mm = c + a - tm.mean;
  const double mean = wp * mp + wm * mm;
  const double gap = mp - mm;
  const double variance = wp * tp.variance + wm * tm.variance + wp * wm * gap * gap;
  return {s * mean, tau * variance};
}

/// Closed-form EWA: sign(b) (|b| - lambda w(tau, lambda, |b|)) per coordinate,
/// with the exact posterior variances on the covariance diagonal and H(tau).
inline EwaEstimate ewa_closed_form(const ShrinkageInputs& in) {
  in.validate();
  const Index p = in.ls_coefficients.size();
  EwaEstimate out;
  out.method = Method::closed_form;
  out.mean = Coefficients::Zero(p);
  out.covariance = Matrix::Zero(p, p);
  out.mc_std_error = Vector::Zero(p);
  double h = 0.0;
  for (Index j = 0; j < p; ++j) {
    const double b = in.ls_coefficients(j);
    const double t = std::abs(b);
    const double w = shrinkage_weight(in.tau, in.lambda, t);
    const double shrunk = t - in.lambda * w;
    out.mean(j) = sign_of(b) * shrunk;
    h += in.lambda * shrunk * shrinkage_complement(in.tau, in.lambda, t);
    out.covariance(j, j) = scalar_posterior_moments(in.tau, in.lambda, b).variance;
  }
  out.h_value = h;
  return out;
}

/// H(tau) = sum_j lambda (|b_j| - lambda w)(1 - w).
inline double h_closed_form(const ShrinkageInputs& in) {
  in.validate();
  double h = 0.0;
  for (Index j = 0; j < in.ls_coefficients.size(); ++j) {
    const double t = std::abs(in.ls_coefficients(j));
    h += in.lambda * (t - in.lambda * shrinkage_weight(in.tau, in.lambda, t)) *
         shrinkage_complement(in.tau, in.lambda, t);
  }
  return h;
}

/// h(lambda_bar, z) = lambda_bar (z - lambda_bar w)(1 - w) with w = w(1, lambda_bar, z).
inline double h_point(double lambda_bar, double z) {
  require(lambda_bar > 0.0, "h_curve: lambda_bar must be > 0");
  require(z >= 0.0, "h_curve: z must be >= 0");
  return lambda_bar * (z - lambda_bar * shrinkage_weight(1.0, lambda_bar, z)) *
         shrinkage_complement(1.0, lambda_bar, z);
}

inline Vector h_curve(double lambda_bar, const Vector& z_grid) {
  Vector out(z_grid.size());
  for (Index k = 0; k < z_grid.size(); ++k) {
    if (k > 0 && !(z_grid(k) > z_grid(k - 1))) {
      throw InvalidArgument("h_curve: grid must be increasing");
    }
    out(k) = h_point(lambda_bar, z_grid(k));
  }
  return out;
}

/// Uniform grid on [0, 2 lambda_bar].
inline Vector default_h_grid(double lambda_bar, Index points = 4000) {
  require(points >= 2, "default_h_grid: need at least two points");
  return Vector::LinSpaced(points, 0.0, 2.0 * lambda_bar);
}

}  // namespace ewa

#endif  // EWA_ORTHONORMAL_HPP
