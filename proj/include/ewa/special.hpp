#ifndef EWA_SPECIAL_HPP
#define EWA_SPECIAL_HPP

#include "ewa/core.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace ewa {

namespace detail {

// exp(x*x) without the rounding error of forming x*x first.
inline double exp_square(double x) {
  const double hi = x * x;
  const double lo = std::fma(x, x, -hi);
  return std::exp(hi) * std::exp(lo);
}

// erfcx(x) for x >= 12 by the Laplace continued fraction
// sqrt(pi) erfcx(x) = 1 / (x + (1/2) / (x + 1 / (x + (3/2) / (x + ...)))).
inline double erfcx_large(double x) {
  double f = x;
  for (int k = 60; k >= 1; --k) f = x + 0.5 * k / f;
  return 1.0 / (std::sqrt(std::numbers::pi) * f);
}

}  // namespace detail

/// Scaled complementary error function exp(x^2) erfc(x).
///
/// Finite for every x >= 0 and for x > -26.6; beyond that it returns +inf.
inline double erfcx(double x) {
  if (std::isnan(x)) return x;
  if (x >= 12.0) return detail::erfcx_large(x);
  if (x >= 0.0) return detail::exp_square(x) * std::erfc(x);
  // erfcx(x) = 2 exp(x^2) - erfcx(-x)
  const double e = detail::exp_square(x);
  if (!std::isfinite(e)) return std::numeric_limits<double>::infinity();
  return 2.0 * e - erfcx(-x);
}

/// log Psi_v(t) where Psi_v(t) = exp(t^2/2v) P(N(0, v) > t).
///
/// Finite for all finite t, including the range where Psi itself overflows.
inline double log_psi(double v, double t) {
  if (!(v > 0.0)) throw InvalidArgument("psi: variance parameter must be > 0");
  const double x = t / std::sqrt(2.0 * v);
  if (x >= 0.0) return std::log(0.5 * erfcx(x));
  const double y = -x;
  // Psi = exp(y^2) (1 - erfc(y)/2)
  return y * y + std::log1p(-0.5 * std::erfc(y));
}

/// Psi_v(t) = (1/2) erfcx(t / sqrt(2v)).
///
/// Throws NumericalError when the value is not representable, which happens
/// once t / sqrt(v) drops below about -37.7.
inline double psi(double v, double t) {
  if (!(v > 0.0)) throw InvalidArgument("psi: variance parameter must be > 0");
  const double value = 0.5 * erfcx(t / std::sqrt(2.0 * v));
  if (!std::isfinite(value)) {
    throw NumericalError("psi: result overflows for t/sqrt(v) = " +
                         std::to_string(t / std::sqrt(v)));
  }
  return value;
}

/// Inverse Mills ratio phi(a) / P(Z > a) of the standard normal.
inline double inverse_mills(double a) {
  return std::exp(-0.5 * std::log(2.0 * std::numbers::pi) - log_psi(1.0, a));
}

/// Moments of Z | Z > a for a standard normal Z.
struct TruncatedMoments {
  double mean;
  double variance;
};

inline TruncatedMoments truncated_normal_moments(double a) {
  if (a > 8.0) {
    // inverse_mills(a) = a + d with d = 1/(a + e), e = 2/(a + 3/(a + ...)).
    // The variance 1 + a M - M^2 equals d (e - d), which avoids cancellation.
    double tail = a;
    for (int k = 80; k >= 3; --k) tail = a + k / tail;
    const double e = 2.0 / tail;
    const double d = 1.0 / (a + e);
    return {a + d, d * (e - d)};
  }
  const double m = inverse_mills(a);
  return {m, std::max(0.0, 1.0 + a * m - m * m)};
}

}  // namespace ewa

#endif  // EWA_SPECIAL_HPP
