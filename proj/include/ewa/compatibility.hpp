#ifndef EWA_COMPATIBILITY_HPP
#define EWA_COMPATIBILITY_HPP

#include "ewa/core.hpp"
#include "ewa/random.hpp"
#include "ewa/trace.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace ewa {

enum class KappaMode { exact, lower_bound_estimate };

inline const char* to_string(KappaMode m) { return m == KappaMode::exact ? "exact" : "lower-bound-estimate"; }

/// Compatibility factor together with the direction that realises it.
///
/// In estimate mode `value` is the smallest ratio found, so it bounds the
/// infimum from above. `witness` holds a coefficient vector; matrix results
/// fill `matrix_witness` instead.
struct KappaResult {
  double value = 0.0;
  KappaMode mode = KappaMode::exact;
  Vector witness;
  Matrix matrix_witness;
  bool attained = false;
  Index evaluated = 0;
};

namespace detail {

inline std::vector<bool> membership(Index p, const std::vector<Index>& j_set) {
  if (j_set.empty()) throw InvalidArgument("compatibility: J must be nonempty");
  std::vector<bool> in_j(static_cast<std::size_t>(p), false);
  for (Index j : j_set) {
    if (j < 0 || j >= p) throw InvalidArgument("compatibility: J index " + std::to_string(j) + " outside [0, p)");
    if (in_j[static_cast<std::size_t>(j)]) throw InvalidArgument("compatibility: repeated J index");
    in_j[static_cast<std::size_t>(j)] = true;
  }
  return in_j;
}

}  // namespace detail

/// c^2 |J| u^T S u / (c ||u_J||_1 - ||u_Jc||_1)^2, or +inf outside the cone.
inline double kappa_ratio(const Matrix& gram, const std::vector<Index>& j_set, double c, const Vector& u) {
  require_same_size(gram.rows(), u.size(), "kappa_ratio");
  const auto in_j = detail::membership(u.size(), j_set);
  double on = 0.0, off = 0.0;
  for (Index k = 0; k < u.size(); ++k) (in_j[static_cast<std::size_t>(k)] ? on : off) += std::abs(u(k));
  const double gap = c * on - off;
  if (!(gap > 0.0)) return std::numeric_limits<double>::infinity();
  return c * c * static_cast<double>(j_set.size()) * u.dot(gram * u) / (gap * gap);
}

/// Largest p handled by exact enumeration.
inline constexpr Index kKappaExactMaxDim = 12;

struct KappaOptions {
  Index directions = 100000;
  Index descent_starts = 8;
  Index descent_iterations = 400;
  std::uint64_t seed = 0;
};

namespace detail {

// Minimises u^T S u on {c ||u_J||_1 - ||u_Jc||_1 = 1} by enumerating sign and
// support patterns. On a fixed pattern the constraint is linear, so each face
// is an equality-constrained quadratic program solved through its KKT system.
// Singular systems are skipped: their minimiser also lies on a smaller face.
inline KappaResult kappa_exact(const Matrix& gram, const std::vector<bool>& in_j, double c, Index j_size) {
  const Index p = gram.rows();
  Index patterns = 1;
  for (Index k = 0; k < p; ++k) patterns *= 3;
  double best = std::numeric_limits<double>::infinity();
  Vector best_u = Vector::Zero(p);
  std::vector<int> sign(static_cast<std::size_t>(p));
  std::vector<Index> face;
  face.reserve(static_cast<std::size_t>(p));
  KappaResult out;
  for (Index code = 1; code < patterns; ++code) {
    Index rest = code;
    face.clear();
    bool any_j = false;
    int first = 0;
    for (Index k = 0; k < p; ++k) {
      const int digit = static_cast<int>(rest % 3);
      rest /= 3;
      sign[static_cast<std::size_t>(k)] = digit == 0 ? 0 : (digit == 1 ? 1 : -1);
      if (digit != 0) {
        if (first == 0) first = sign[static_cast<std::size_t>(k)];
        face.push_back(k);
        any_j = any_j || in_j[static_cast<std::size_t>(k)];
      }
    }
    // u and -u give the same ratio.
    if (first < 0 || !any_j) continue;
    const Index f = static_cast<Index>(face.size());
    Matrix kkt = Matrix::Zero(f + 1, f + 1);
    for (Index a = 0; a < f; ++a) {
      const Index ia = face[static_cast<std::size_t>(a)];
      for (Index b = 0; b < f; ++b) {
        const Index ib = face[static_cast<std::size_t>(b)];
        kkt(a, b) = sign[static_cast<std::size_t>(ia)] * sign[static_cast<std::size_t>(ib)] * gram(ia, ib);
      }
      const double coef = in_j[static_cast<std::size_t>(ia)] ? c : -1.0;
      kkt(a, f) = coef;
      kkt(f, a) = coef;
    }
    ++out.evaluated;
    Eigen::FullPivLU<Matrix> lu(kkt);
    lu.setThreshold(1e-11);
    if (lu.rank() < f + 1) continue;
    Vector rhs = Vector::Zero(f + 1);
    rhs(f) = 1.0;
    const Vector sol = lu.solve(rhs);
    const Vector z = sol.head(f);
    const double zmax = z.cwiseAbs().maxCoeff();
    if (z.minCoeff() < -1e-12 * std::max(1.0, zmax)) continue;
    Vector u = Vector::Zero(p);
    for (Index a = 0; a < f; ++a) {
      const Index ia = face[static_cast<std::size_t>(a)];
      u(ia) = sign[static_cast<std::size_t>(ia)] * std::max(z(a), 0.0);
    }
    const double value = std::max(u.dot(gram * u), 0.0);
    if (value < best) {
      best = value;
      best_u = u;
    }
  }
  out.value = c * c * static_cast<double>(j_size) * best;
  out.mode = KappaMode::exact;
  out.witness = best_u;
  // A convex quadratic bounded below on a polyhedron attains its minimum, and
  // the slice lies inside the open cone.
  out.attained = std::isfinite(best);
  return out;
}

// Random cone member: u_J Gaussian, u_Jc Gaussian rescaled so that
// ||u_Jc||_1 = r c ||u_J||_1 with r uniform on [0, 1).
inline Vector cone_direction(Engine& rng, NormalSource& normal, const std::vector<bool>& in_j, double c) {
  const Index p = static_cast<Index>(in_j.size());
  Vector u(p);
  double on = 0.0, off = 0.0;
  for (Index k = 0; k < p; ++k) {
    u(k) = normal(rng);
    (in_j[static_cast<std::size_t>(k)] ? on : off) += std::abs(u(k));
  }
  if (off > 0.0) {
    const double scale = uniform01(rng) * c * on / off;
    for (Index k = 0; k < p; ++k) {
      if (!in_j[static_cast<std::size_t>(k)]) u(k) *= scale;
    }
  }
  return u;
}

// Gradient descent on log ratio with backtracking that never leaves the cone.
template <class Ratio, class Gradient>
Vector descend(Vector u, const Ratio& ratio, const Gradient& gradient, Index iterations) {
  double current = ratio(u);
  double step = 0.1;
  for (Index it = 0; it < iterations; ++it) {
    const Vector g = gradient(u);
    const double gnorm = g.norm();
    if (!(gnorm > 0.0) || !std::isfinite(gnorm)) break;
    const Vector dir = g / gnorm * u.norm();
    bool moved = false;
    for (int b = 0; b < 40; ++b) {
      const Vector trial = u - step * dir;
      const double value = ratio(trial);
      if (value < current) {
        u = trial;
        current = value;
        step = std::min(step * 2.0, 1.0);
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;
  }
  return u;
}

}  // namespace detail

/// Compatibility factor kappa_{J,c} of a design (gram = X^T X / n) over the
/// cone ||u_Jc||_1 < c ||u_J||_1.
inline KappaResult kappa_from_gram(const Matrix& gram, const std::vector<Index>& j_set, double c, KappaMode mode,
                                   const KappaOptions& options = {}) {
  require(gram.rows() == gram.cols() && gram.rows() >= 1, "kappa: gram must be square and nonempty");
  require(std::isfinite(c) && c > 0.0, "kappa: c must be > 0");
  const Index p = gram.rows();
  const auto in_j = detail::membership(p, j_set);
  const Index j_size = static_cast<Index>(j_set.size());
  if (mode == KappaMode::exact) {
    if (p > kKappaExactMaxDim) {
      throw InvalidArgument("kappa: exact mode enumerates 3^p patterns and needs p <= " +
                            std::to_string(kKappaExactMaxDim) + ", got p = " + std::to_string(p));
    }
    return detail::kappa_exact(gram, in_j, c, j_size);
  }

  require(options.directions >= 1, "kappa: directions must be >= 1");
  Engine rng = make_engine(options.seed, 0x6b61);
  NormalSource normal;
  const auto ratio = [&](const Vector& u) { return kappa_ratio(gram, j_set, c, u); };
  std::vector<std::pair<double, Vector>> starts;
  const auto keep = static_cast<std::size_t>(std::max<Index>(options.descent_starts, 1));
  for (Index k = 0; k < options.directions; ++k) {
    Vector u = detail::cone_direction(rng, normal, in_j, c);
    const double r = ratio(u);
    if (!std::isfinite(r)) continue;
    if (starts.size() < keep || r < starts.back().first) {
      starts.emplace_back(r, std::move(u));
      std::sort(starts.begin(), starts.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
      if (starts.size() > keep) starts.pop_back();
    }
  }
  if (starts.empty()) throw NumericalError("kappa: no cone member found");
  const auto gradient = [&](const Vector& u) -> Vector {
    // d/du log(u^T S u) - 2 log(c ||u_J||_1 - ||u_Jc||_1)
    const Vector su = gram * u;
    const double quad = u.dot(su);
    double on = 0.0, off = 0.0;
    for (Index k = 0; k < p; ++k) (in_j[static_cast<std::size_t>(k)] ? on : off) += std::abs(u(k));
    const double gap = c * on - off;
    Vector g = 2.0 * su / std::max(quad, 1e-300);
    for (Index k = 0; k < p; ++k) {
      const double d = (in_j[static_cast<std::size_t>(k)] ? c : -1.0) * sign_of(u(k));
      g(k) -= 2.0 * d / gap;
    }
    return g;
  };
  KappaResult out;
  out.mode = KappaMode::lower_bound_estimate;
  out.value = std::numeric_limits<double>::infinity();
  out.evaluated = options.directions;
  for (auto& [r, u] : starts) {
    const Vector v = detail::descend(u, ratio, gradient, options.descent_iterations);
    const double value = ratio(v);
    if (value < out.value) {
      out.value = value;
      out.witness = v;
    }
  }
  out.attained = false;
  return out;
}

inline KappaResult kappa_vector(const Matrix& design, const std::vector<Index>& j_set, double c, KappaMode mode,
                                const KappaOptions& options = {}) {
  require(design.rows() >= 1 && design.cols() >= 1, "kappa: empty design");
  const Matrix gram = design.transpose() * design / static_cast<double>(design.rows());
  return kappa_from_gram(gram, j_set, c, mode, options);
}

// ---------------------------------------------------------------------------
// Matrix case

/// c^2 |J| ||U||_{L2(X)}^2 / (c ||P_perp U||_1 - ||P U||_1)^2, or +inf outside the cone.
inline double kappa_matrix_ratio(const TraceProblem& problem, const SubspaceProjector& projector, double c,
                                 const Matrix& u) {
  require_shape(problem, u, "kappa_matrix_ratio");
  const double gap = c * nuclear_norm(projector.project_perp(u)) - nuclear_norm(projector.project(u));
  if (!(gap > 0.0)) return std::numeric_limits<double>::infinity();
  const double energy = (problem.rows() * vec(u)).squaredNorm() / static_cast<double>(problem.n());
  return c * c * static_cast<double>(projector.j_set().size()) * energy / (gap * gap);
}

/// Random search over the cone C(B_bar, J, c) followed by local descent.
/// Only the design of `problem` is used.
inline KappaResult kappa_matrix(const TraceProblem& problem, const Matrix& b_bar, const std::vector<Index>& j_set,
                                double c, Index budget = 20000, std::uint64_t seed = 0,
                                Index descent_iterations = 200) {
  require(std::isfinite(c) && c > 0.0, "kappa_matrix: c must be > 0");
  require(budget >= 1, "kappa_matrix: budget must be >= 1");
  require_shape(problem, b_bar, "kappa_matrix: B_bar");
  if (j_set.empty()) throw InvalidArgument("kappa_matrix: J must be nonempty");
  const SubspaceProjector projector(b_bar, j_set);
  const Index m1 = problem.m1(), m2 = problem.m2();
  Engine rng = make_engine(seed, 0x6b6d);
  NormalSource normal;
  const auto random_matrix = [&] {
    Matrix a(m1, m2);
    for (Index k = 0; k < a.size(); ++k) a.data()[k] = normal(rng);
    return a;
  };
  const auto ratio = [&](const Matrix& u) { return kappa_matrix_ratio(problem, projector, c, u); };

  KappaResult out;
  out.mode = KappaMode::lower_bound_estimate;
  out.value = std::numeric_limits<double>::infinity();
  Matrix best;
  for (Index k = 0; k < budget; ++k) {
    const Matrix perp = projector.project_perp(random_matrix());
    const double perp_norm = nuclear_norm(perp);
    if (!(perp_norm > 0.0)) continue;
    Matrix para = projector.project(random_matrix());
    const double para_norm = nuclear_norm(para);
    if (para_norm > 0.0) para *= uniform01(rng) * c * perp_norm / para_norm;
    const Matrix u = perp + para;
    const double r = ratio(u);
    ++out.evaluated;
    if (r < out.value) {
      out.value = r;
      best = u;
    }
  }
  if (!std::isfinite(out.value)) throw NumericalError("kappa_matrix: budget exhausted with no cone member");

  const Matrix gram = problem.gram();
  const auto subgradient = [](const Matrix& m) -> Matrix {
    Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector s = svd.singularValues();
    const double cut = s.size() > 0 ? 1e-12 * s(0) : 0.0;
    Matrix g = Matrix::Zero(m.rows(), m.cols());
    for (Index k = 0; k < s.size(); ++k) {
      if (s(k) > cut) g += svd.matrixU().col(k) * svd.matrixV().col(k).transpose();
    }
    return g;
  };
  const auto gradient = [&](const Vector& v) -> Vector {
    const Matrix u = unvec(v, m1, m2);
    const Vector gv = gram * v;
    const double energy = v.dot(gv);
    const Matrix perp = projector.project_perp(u);
    const Matrix para = projector.project(u);
    const double gap = c * nuclear_norm(perp) - nuclear_norm(para);
    // Both projectors are self-adjoint in the Frobenius inner product.
    const Matrix dgap = c * projector.project_perp(subgradient(perp)) - projector.project(subgradient(para));
    return 2.0 * gv / std::max(energy, 1e-300) - 2.0 * vec(dgap) / gap;
  };
  const auto vratio = [&](const Vector& v) { return ratio(unvec(v, m1, m2)); };
  const Vector refined = detail::descend(vec(best), vratio, gradient, descent_iterations);
  const double refined_value = vratio(refined);
  if (refined_value < out.value) {
    out.value = refined_value;
    best = unvec(refined, m1, m2);
  }
  out.matrix_witness = best;
  out.attained = false;
  return out;
}

}  // namespace ewa

#endif  // EWA_COMPATIBILITY_HPP
