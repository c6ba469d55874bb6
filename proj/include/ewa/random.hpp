#ifndef EWA_RANDOM_HPP
#define EWA_RANDOM_HPP

#include "ewa/core.hpp"

#include <cmath>
#include <cstdint>
#include <random>

namespace ewa {

using Engine = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Counter-based seed derivation: stream k of master seed s. Distinct
/// streams never share a seed with each other or with the master.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632BE59BD9B4E019ULL));
}

inline Engine make_engine(std::uint64_t seed, std::uint64_t stream = 0) {
  return Engine(derive_seed(seed, stream));
}

/// Uniform on [0, 1) with 53 random bits.
inline double uniform01(Engine& engine) {
  return static_cast<double>(engine() >> 11) * 0x1.0p-53;
}

/// Uniform on (0, 1].
inline double uniform01_open_low(Engine& engine) { return 1.0 - uniform01(engine); }

/// Standard normal by the polar method.
class NormalSource {
 public:
  double operator()(Engine& engine) {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform01(engine) - 1.0;
      v = 2.0 * uniform01(engine) - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

  Vector vector(Engine& engine, Index size) {
    Vector out(size);
    for (Index i = 0; i < size; ++i) out(i) = (*this)(engine);
    return out;
  }

 private:
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Draw from N(0,1) conditioned on being > lower.
///
/// Plain rejection when lower <= 0.5, otherwise Robert's translated
/// exponential proposal, which stays efficient arbitrarily far in the tail.
inline double truncated_standard_normal_above(Engine& engine, NormalSource& normal,
                                              double lower) {
  if (lower <= 0.5) {
    for (;;) {
      const double z = normal(engine);
      if (z > lower) return z;
    }
  }
  const double rate = 0.5 * (lower + std::sqrt(lower * lower + 4.0));
  for (;;) {
    const double z = lower - std::log(uniform01_open_low(engine)) / rate;
    const double d = z - rate;
    if (uniform01(engine) <= std::exp(-0.5 * d * d)) return z;
  }
}

/// Matrix with orthonormal columns (n x p, p <= n) from the QR of a Gaussian
/// matrix, with signs fixed so that R has a positive diagonal.
inline Matrix random_orthonormal_columns(Engine& engine, Index n, Index p) {
  require(p <= n, "random_orthonormal_columns: need p <= n");
  NormalSource normal;
  Matrix g(n, p);
  for (Index j = 0; j < p; ++j)
    for (Index i = 0; i < n; ++i) g(i, j) = normal(engine);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(n, p);
  const Matrix r = qr.matrixQR().topRows(p).triangularView<Eigen::Upper>();
  for (Index j = 0; j < p; ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  return q;
}

}  // namespace ewa

#endif  // EWA_RANDOM_HPP
