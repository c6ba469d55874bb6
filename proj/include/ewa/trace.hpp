#ifndef EWA_TRACE_HPP
#define EWA_TRACE_HPP

#include "ewa/core.hpp"
#include "ewa/io.hpp"
#include "ewa/random.hpp"
#include "ewa/sampler.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace ewa {

/// Trace regression y_i = <X_i, B> + noise with m1 x m2 design matrices.
///
/// The tensor is stored as an n x (m1 m2) matrix whose i-th row is the
/// column-major vectorisation of X_i, so <X_i, B> = row_i . vec(B).
class TraceProblem {
 public:
  TraceProblem(Matrix rows, Vector response, Index m1, Index m2, double sigma, double lambda,
               double tau)
      : rows_(std::move(rows)),
        response_(std::move(response)),
        m1_(m1),
        m2_(m2),
        sigma_(sigma),
        lambda_(lambda),
        tau_(tau) {
    require(m1_ >= 1 && m2_ >= 1, "trace problem: m1 and m2 must be >= 1");
    if (rows_.rows() < 1) throw DimensionMismatch("trace problem: empty tensor");
    require_same_size(m1_ * m2_, rows_.cols(), "trace problem: tensor slice size");
    require_same_size(rows_.rows(), response_.size(), "trace problem: response length");
    if (!rows_.allFinite() || !response_.allFinite()) throw DataError("trace problem: non-finite data");
    require(std::isfinite(sigma_) && sigma_ >= 0.0, "trace problem: sigma must be >= 0");
    require(std::isfinite(lambda_) && lambda_ >= 0.0, "trace problem: lambda must be >= 0");
    require(std::isfinite(tau_) && tau_ > 0.0, "trace problem: tau must be > 0");
  }

  const Matrix& rows() const { return rows_; }
  const Vector& response() const { return response_; }
  Index n() const { return rows_.rows(); }
  Index m1() const { return m1_; }
  Index m2() const { return m2_; }
  Index dim() const { return m1_ * m2_; }
  double sigma() const { return sigma_; }
  double lambda() const { return lambda_; }
  double tau() const { return tau_; }

  Matrix slice(Index i) const { return Eigen::Map<const Matrix>(rows_.row(i).eval().data(), m1_, m2_); }

  /// Gram operator on vec(B): (1/n) sum_i vec(X_i) vec(X_i)^T.
  Matrix gram() const { return rows_.transpose() * rows_ / static_cast<double>(n()); }

  TraceProblem with_response(Vector y) const { return {rows_, std::move(y), m1_, m2_, sigma_, lambda_, tau_}; }
  TraceProblem with_lambda(double l) const { return {rows_, response_, m1_, m2_, sigma_, l, tau_}; }
  TraceProblem with_tau(double t) const { return {rows_, response_, m1_, m2_, sigma_, lambda_, t}; }

 private:
  Matrix rows_;
  Vector response_;
  Index m1_;
  Index m2_;
  double sigma_;
  double lambda_;
  double tau_;
};

inline Vector vec(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

inline Matrix unvec(const Vector& v, Index m1, Index m2) {
  require_same_size(m1 * m2, v.size(), "unvec");
  return Eigen::Map<const Matrix>(v.data(), m1, m2);
}

inline Vector singular_values(const Matrix& m) {
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues();
}

inline double nuclear_norm(const Matrix& m) { return singular_values(m).sum(); }

inline double operator_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  return singular_values(m)(0);
}

/// Singular-value soft thresholding at `threshold`.
inline Matrix svt(const Matrix& m, double threshold) {
  Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector s = (svd.singularValues().array() - threshold).max(0.0);
  return svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
}

inline void require_shape(const TraceProblem& problem, const Matrix& b, const std::string& what) {
  if (b.rows() != problem.m1() || b.cols() != problem.m2()) {
    throw DimensionMismatch(what + ": expected " + std::to_string(problem.m1()) + "x" +
                            std::to_string(problem.m2()) + ", got " + std::to_string(b.rows()) + "x" +
                            std::to_string(b.cols()));
  }
}

/// (1/n) sum_i <X_i, A - B>^2.
inline double trace_loss(const TraceProblem& problem, const Matrix& a, const Matrix& b) {
  require_shape(problem, a, "trace_loss");
  require_shape(problem, b, "trace_loss");
  return (problem.rows() * vec(a - b)).squaredNorm() / static_cast<double>(problem.n());
}

/// (1/2n) sum_i (y_i - <X_i, B>)^2 + lambda ||B||_1 (nuclear norm).
inline double trace_potential(const TraceProblem& problem, const Matrix& b) {
  require_shape(problem, b, "trace_potential");
  const double n = static_cast<double>(problem.n());
  return (problem.response() - problem.rows() * vec(b)).squaredNorm() / (2.0 * n) +
         problem.lambda() * nuclear_norm(b);
}

/// G(U) = ||U||_{L2(X)}^2 + lambda ||U||_1.
inline double trace_peakedness_functional(const TraceProblem& problem, const Matrix& u) {
  require_shape(problem, u, "trace G");
  return (problem.rows() * vec(u)).squaredNorm() / static_cast<double>(problem.n()) +
         problem.lambda() * nuclear_norm(u);
}

/// v_X = max(||(1/n) sum X_i X_i^T||, ||(1/n) sum X_i^T X_i||)^{1/2}.
inline double v_x(const Matrix& rows, Index m1, Index m2) {
  require(rows.rows() >= 1, "v_x: empty tensor");
  require_same_size(m1 * m2, rows.cols(), "v_x: slice size");
  Matrix left = Matrix::Zero(m1, m1);
  Matrix right = Matrix::Zero(m2, m2);
  for (Index i = 0; i < rows.rows(); ++i) {
    const Matrix x = unvec(rows.row(i).transpose(), m1, m2);
    left.noalias() += x * x.transpose();
    right.noalias() += x.transpose() * x;
  }
  const double n = static_cast<double>(rows.rows());
  Eigen::SelfAdjointEigenSolver<Matrix> el(left / n, Eigen::EigenvaluesOnly);
  Eigen::SelfAdjointEigenSolver<Matrix> er(right / n, Eigen::EigenvaluesOnly);
  return std::sqrt(std::max({el.eigenvalues().maxCoeff(), er.eigenvalues().maxCoeff(), 0.0}));
}

inline double v_x(const TraceProblem& problem) { return v_x(problem.rows(), problem.m1(), problem.m2()); }

/// Smallest lambda with lambda >= 2 sigma v_X sqrt((2/n) log((m1 + m2)/delta)).
inline double calibrate_lambda_matrix(double sigma, double vx, Index n, Index m1, Index m2, double delta) {
  require(delta > 0.0 && delta < 1.0, "calibrate_lambda_matrix: delta must be in (0, 1)");
  require(sigma >= 0.0 && vx >= 0.0, "calibrate_lambda_matrix: sigma and v_X must be >= 0");
  require(n >= 1 && m1 >= 1 && m2 >= 1, "calibrate_lambda_matrix: sizes must be >= 1");
  return 2.0 * sigma * vx *
         std::sqrt(2.0 / static_cast<double>(n) * std::log(static_cast<double>(m1 + m2) / delta));
}

/// ||xi^T X|| = operator norm of sum_i xi_i X_i.
inline double noise_operator_norm(const TraceProblem& problem, const Vector& xi) {
  require_same_size(problem.n(), xi.size(), "noise_operator_norm");
  return operator_norm(unvec(problem.rows().transpose() * xi, problem.m1(), problem.m2()));
}

// ---------------------------------------------------------------------------
// Designs

/// X_i = sqrt(m1 m2) E_{a_i b_i} with entries drawn uniformly.
inline Matrix entry_sampling_design(Engine& rng, Index n, Index m1, Index m2) {
  const Index d = m1 * m2;
  Matrix rows = Matrix::Zero(n, d);
  const double scale = std::sqrt(static_cast<double>(d));
  for (Index i = 0; i < n; ++i) {
    const auto k = static_cast<Index>(uniform01(rng) * static_cast<double>(d));
    rows(i, std::min(k, d - 1)) = scale;
  }
  return rows;
}

/// Every entry observed once with weight sqrt(m1 m2), so ||U||_{L2(X)} = ||U||_F.
inline Matrix identity_sampling_design(Index m1, Index m2) {
  const Index d = m1 * m2;
  return std::sqrt(static_cast<double>(d)) * Matrix::Identity(d, d);
}

// ---------------------------------------------------------------------------
// Projectors

/// P(U) = (I - V1J V1J^T) U (I - V2J V2J^T) and its complement P_perp = I - P,
/// built from the singular vectors of B_bar indexed by J.
class SubspaceProjector {
 public:
  SubspaceProjector(const Matrix& b_bar, const std::vector<Index>& j_set) : j_(j_set) {
    Eigen::JacobiSVD<Matrix> svd(b_bar, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector s = svd.singularValues();
    const double cutoff = s.size() > 0 ? 1e-12 * std::max(s(0), 0.0) : 0.0;
    rank_ = 0;
    for (Index k = 0; k < s.size(); ++k) rank_ += s(k) > cutoff && s(k) > 0.0 ? 1 : 0;
    for (std::size_t a = 0; a < j_.size(); ++a) {
      if (j_[a] < 0 || j_[a] >= rank_) {
        throw InvalidArgument("projector: J index " + std::to_string(j_[a]) + " outside [0, rank " +
                              std::to_string(rank_) + ")");
      }
      for (std::size_t b = 0; b < a; ++b) {
        if (j_[a] == j_[b]) throw InvalidArgument("projector: repeated J index");
      }
    }
    const Index k = static_cast<Index>(j_.size());
    Matrix v1(b_bar.rows(), k);
    Matrix v2(b_bar.cols(), k);
    for (Index a = 0; a < k; ++a) {
      v1.col(a) = svd.matrixU().col(j_[static_cast<std::size_t>(a)]);
      v2.col(a) = svd.matrixV().col(j_[static_cast<std::size_t>(a)]);
    }
    left_ = Matrix::Identity(b_bar.rows(), b_bar.rows()) - v1 * v1.transpose();
    right_ = Matrix::Identity(b_bar.cols(), b_bar.cols()) - v2 * v2.transpose();
  }

  Matrix project(const Matrix& u) const { return left_ * u * right_; }
  Matrix project_perp(const Matrix& u) const { return u - project(u); }
  Index rank() const { return rank_; }
  const std::vector<Index>& j_set() const { return j_; }

 private:
  std::vector<Index> j_;
  Index rank_ = 0;
  Matrix left_;
  Matrix right_;
};

inline Matrix project_Jc(const Matrix& b_bar, const std::vector<Index>& j_set, const Matrix& u) {
  return SubspaceProjector(b_bar, j_set).project(u);
}

inline Matrix project_Jc_perp(const Matrix& b_bar, const std::vector<Index>& j_set, const Matrix& u) {
  return SubspaceProjector(b_bar, j_set).project_perp(u);
}

/// First `count` singular directions: {0, ..., count - 1}.
inline std::vector<Index> leading_set(Index count) {
  std::vector<Index> j(static_cast<std::size_t>(std::max<Index>(count, 0)));
  for (Index k = 0; k < count; ++k) j[static_cast<std::size_t>(k)] = k;
  return j;
}

// ---------------------------------------------------------------------------
// Nuclear-norm penalised least squares

struct MatrixEstimate {
  enum class Kind { nnp_ls, ewa_sampler };
  Matrix matrix;
  Vector singular_values;
  Kind method = Kind::nnp_ls;
  Index iterations = 0;
  bool converged = false;
  std::vector<double> objective_history;
};

inline const char* to_string(MatrixEstimate::Kind k) {
  return k == MatrixEstimate::Kind::nnp_ls ? "nnp-ls" : "ewa-sampler";
}

/// Proximal gradient with step 1/L and singular-value thresholding. The
/// objective is nonincreasing along the iterates; iteration stops when its
/// relative decrease falls below tol.
inline MatrixEstimate fit_nnp_ls(const TraceProblem& problem, double tol = 1e-13, Index max_iter = 200000) {
  require(max_iter >= 1, "fit_nnp_ls: max_iter must be >= 1");
  require(tol > 0.0, "fit_nnp_ls: tol must be > 0");
  const Index m1 = problem.m1(), m2 = problem.m2();
  const double n = static_cast<double>(problem.n());
  const Matrix gram = problem.gram();
  const Vector xty = problem.rows().transpose() * problem.response() / n;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram, Eigen::EigenvaluesOnly);
  const double lipschitz = std::max(eig.eigenvalues().maxCoeff(), 1e-300);
  const double step = 1.0 / lipschitz;

  MatrixEstimate out;
  Vector b = Vector::Zero(m1 * m2);
  double objective = trace_potential(problem, unvec(b, m1, m2));
  out.objective_history.push_back(objective);
  int quiet = 0;
  for (Index it = 1; it <= max_iter; ++it) {
    const Vector grad = gram * b - xty;
    const Vector next = vec(svt(unvec(b - step * grad, m1, m2), step * problem.lambda()));
    const double next_objective = trace_potential(problem, unvec(next, m1, m2));
    out.iterations = it;
    const double decrease = objective - next_objective;
    const double moved = (next - b).norm();
    b = next;
    objective = std::min(objective, next_objective);
    out.objective_history.push_back(next_objective);
    // Two consecutive quiet steps guard against a single tiny move.
    if (decrease <= tol * std::max(1.0, std::abs(objective)) && moved <= 1e-9 * std::max(1.0, b.norm())) {
      if (++quiet >= 2) {
        out.converged = true;
        break;
      }
    } else {
      quiet = 0;
    }
  }
  out.matrix = unvec(b, m1, m2);
  out.singular_values = singular_values(out.matrix);
  out.method = MatrixEstimate::Kind::nnp_ls;
  return out;
}

// ---------------------------------------------------------------------------
// Pseudo-posterior sampling

namespace detail {

// Sum of singular values through the eigenvalues of the smaller Gram matrix.
inline double fast_nuclear_norm(const Matrix& m) {
  const Matrix g = m.rows() <= m.cols() ? Matrix(m * m.transpose()) : Matrix(m.transpose() * m);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(g, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
}

}  // namespace detail

/// Draws from the pseudo-posterior proportional to exp(-V_n(B) / tau).
/// draws.col(k) is vec of the k-th retained matrix.
///
/// SamplerKind::gibbs runs slice-within-Gibbs in the singular basis of the
/// penalised fit: B = L C R^T with C updated one entry at a time, which
/// leaves the nuclear norm unchanged. Slice widths adapt during burn-in only.
/// SamplerKind::myula runs proximal Langevin with the SVT prox.
inline SampleSet sample_matrix_posterior(const TraceProblem& problem, const SamplerConfig& config) {
  config.validate();
  require(problem.dim() <= 400, "sample_matrix_posterior: m1 * m2 must be <= 400");
  const Index m1 = problem.m1(), m2 = problem.m2(), d = problem.dim();
  const double n = static_cast<double>(problem.n());
  const double tau = problem.tau();
  const double lambda = problem.lambda();
  const Matrix gram = problem.gram();
  const Vector xty = problem.rows().transpose() * problem.response() / n;
  Engine rng = make_engine(config.seed, 0x7472);

  SampleSet out;
  const MatrixEstimate fit = fit_nnp_ls(problem, 1e-12, 20000);
  out.start = vec(fit.matrix);

  if (config.kind == SamplerKind::myula) {
    out.config = resolve_config(config, detail::largest_eigenvalue(gram) / tau, tau);
    const auto gradient = [&](const Vector& u) -> Vector { return (gram * u - xty) / tau; };
    const auto prox = [&](const Vector& u, double gamma) -> Vector {
      return vec(svt(unvec(u, m1, m2), gamma * lambda / tau));
    };
    out.draws = detail::run_myula(out.start, gradient, prox, out.config.step_size, out.config.moreau_gamma,
                                  out.config.burn_in, out.config.n_samples, out.config.thinning, rng);
    return out;
  }

  out.config = config;
  Eigen::JacobiSVD<Matrix> svd(fit.matrix, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Matrix left = svd.matrixU();
  const Matrix right = svd.matrixV();
  // vec(L C R^T) = (R kron L) vec(C).
  Matrix basis(d, d);
  for (Index b = 0; b < m2; ++b)
    for (Index a = 0; a < m1; ++a) basis.col(a + b * m1) = vec(left.col(a) * right.col(b).transpose());
  const Matrix g = basis.transpose() * gram * basis;
  const Vector h = basis.transpose() * xty;

  Vector c = basis.transpose() * out.start;
  Matrix cm = unvec(c, m1, m2);
  Vector q = g * c - h;  // gradient of the smooth part of V_n in C coordinates
  double nuclear = detail::fast_nuclear_norm(cm);
  Vector width(d);
  for (Index k = 0; k < d; ++k) {
    const double curvature = std::max(g(k, k), 1e-12);
    width(k) = std::min(std::sqrt(tau / curvature), lambda > 0.0 ? 10.0 * tau / lambda : HUGE_VAL);
    if (!(width(k) > 0.0) || !std::isfinite(width(k))) width(k) = std::sqrt(tau);
  }

  out.draws.resize(d, config.n_samples);
  const Index total = config.burn_in + config.n_samples * config.thinning;
  for (Index it = 0; it < total; ++it) {
    const bool adapting = it < config.burn_in;
    for (Index k = 0; k < d; ++k) {
      const Index a = k % m1, b = k / m1;
      const double base = cm(a, b);
      const double gkk = g(k, k);
      const double qk = q(k);
      // log density of the move t relative to the current state
      const auto log_ratio = [&](double t, double& nuc) {
        cm(a, b) = base + t;
        nuc = detail::fast_nuclear_norm(cm);
        return -((0.5 * gkk * t + qk) * t + lambda * (nuc - nuclear)) / tau;
      };
      const double level = std::log(uniform01_open_low(rng));
      double nuc = nuclear;
      const double w = width(k);
      double lo = -uniform01(rng) * w;
      double hi = lo + w;
      for (int s = 0; s < 64 && log_ratio(lo, nuc) > level; ++s) lo -= w;
      for (int s = 0; s < 64 && log_ratio(hi, nuc) > level; ++s) hi += w;
      double t = 0.0;
      for (int s = 0;; ++s) {
        t = lo + uniform01(rng) * (hi - lo);
        if (log_ratio(t, nuc) > level) break;
        if (t < 0.0) {
          lo = t;
        } else {
          hi = t;
        }
        if (s > 200) {
          t = 0.0;
          log_ratio(0.0, nuc);
          break;
        }
      }
      cm(a, b) = base + t;
      nuclear = nuc;
      if (t != 0.0) q.noalias() += g.col(k) * t;
      if (adapting) width(k) = 0.9 * width(k) + 0.1 * std::max(3.0 * std::abs(t), 1e-3 * width(k));
    }
    if (it % 256 == 255) {
      c = vec(cm);
      q = g * c - h;
      nuclear = detail::fast_nuclear_norm(cm);
    }
    const Index kept = it - config.burn_in;
    if (kept >= 0 && (kept + 1) % config.thinning == 0) {
      const Vector state = basis * vec(cm);
      detail::check_finite(state, it);
      out.draws.col(kept / config.thinning) = state;
    }
  }
  return out;
}

/// Posterior mean of the matrix draws.
inline MatrixEstimate matrix_ewa(const TraceProblem& problem, const SampleSet& samples) {
  require(samples.size() >= 1, "matrix_ewa: no draws");
  require_same_size(problem.dim(), samples.dim(), "matrix_ewa: draw dimension");
  MatrixEstimate out;
  out.matrix = unvec(samples.draws.rowwise().mean(), problem.m1(), problem.m2());
  out.singular_values = singular_values(out.matrix);
  out.method = MatrixEstimate::Kind::ewa_sampler;
  out.converged = true;
  return out;
}

struct MatrixH {
  double value = 0.0;
  double std_error = 0.0;
};

/// H = m1 m2 tau - int G + G(mean) from the draws, with a delta-method
/// standard error.
inline MatrixH matrix_h(const TraceProblem& problem, const SampleSet& samples) {
  require(samples.size() >= 1, "matrix_h: no draws");
  const Index m1 = problem.m1(), m2 = problem.m2();
  const Vector mean = samples.draws.rowwise().mean();
  const Matrix mean_m = unvec(mean, m1, m2);
  const Index count = samples.size();
  Vector gvals(count);
  for (Index k = 0; k < count; ++k) {
    gvals(k) = trace_peakedness_functional(problem, unvec(samples.draws.col(k), m1, m2));
  }
  MatrixH out;
  out.value = static_cast<double>(problem.dim()) * problem.tau() - gvals.mean() +
              trace_peakedness_functional(problem, mean_m);
  // Gradient of G at the mean: 2 Gram vec(M) + lambda vec(U V^T).
  Eigen::JacobiSVD<Matrix> svd(mean_m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Matrix sub = svd.matrixU() * svd.matrixV().transpose();
  const Vector grad = 2.0 * problem.gram() * mean + problem.lambda() * vec(sub);
  const Vector series = gvals - samples.draws.transpose() * grad;
  out.std_error = mc_standard_error(series);
  return out;
}

/// (1/n) int ||U - mean||_{L2(X)}^2 <= m1 m2 tau within 3 Monte Carlo SEs.
inline BoundReport check_matrix_variance_bound(const TraceProblem& problem, const SampleSet& samples) {
  const Vector mean = samples.draws.rowwise().mean();
  const Matrix fitted = problem.rows() * (samples.draws.colwise() - mean);
  const Vector series = fitted.colwise().squaredNorm().transpose() / static_cast<double>(problem.n());
  return BoundReport::make("matrix_variance_bound", series.mean(),
                           static_cast<double>(problem.dim()) * problem.tau(),
                           3.0 * mc_standard_error(series));
}

/// Exceedance frequency of V_n(B) > int V_n + tau sqrt(m1 m2) t against 2 exp(-t/16).
inline BoundReport check_matrix_concentration(const TraceProblem& problem, const SampleSet& samples, double t) {
  require(t > 0.0, "check_matrix_concentration: t must be > 0");
  const Index count = samples.size();
  Vector v(count);
  for (Index k = 0; k < count; ++k) {
    v(k) = trace_potential(problem, unvec(samples.draws.col(k), problem.m1(), problem.m2()));
  }
  const double level = v.mean() + problem.tau() * std::sqrt(static_cast<double>(problem.dim())) * t;
  std::vector<bool> violated(static_cast<std::size_t>(count));
  for (Index k = 0; k < count; ++k) violated[static_cast<std::size_t>(k)] = v(k) > level;
  auto report = detail::frequency_report("matrix_concentration", violated, 2.0 * std::exp(-t / 16.0),
                                         effective_sample_size(v));
  report.context["t"] = std::to_string(t);
  return report;
}

// ---------------------------------------------------------------------------
// JSON

/// {shape: [n, m1, m2], tensor: n nested m1 x m2 arrays, response, sigma, lambda, tau}
inline Json trace_problem_to_json(const TraceProblem& problem) {
  Json tensor = Json::array();
  for (Index i = 0; i < problem.n(); ++i) tensor.push_back(matrix_to_json(problem.slice(i)));
  return Json{{"shape", {problem.n(), problem.m1(), problem.m2()}},
              {"tensor", std::move(tensor)},
              {"response", vector_to_json(problem.response())},
              {"sigma", problem.sigma()},
              {"lambda", problem.lambda()},
              {"tau", problem.tau()}};
}

/// Missing tuning values default to sigma = 1, lambda from
/// calibrate_lambda_matrix(sigma, v_X, n, m1, m2, 0.05) and tau = sigma^2 / (n m1 m2).
inline TraceProblem trace_problem_from_json(const Json& j, const TuningOverrides& overrides = {}) {
  if (!j.is_object()) throw DataError("json: trace problem must be an object");
  for (const char* key : {"shape", "tensor", "response"}) {
    if (!j.contains(key)) throw DataError(std::string("json: trace problem needs '") + key + "'");
  }
  const Json& shape = j["shape"];
  if (!shape.is_array() || shape.size() != 3) throw DataError("json: shape must be [n, m1, m2]");
  for (const auto& s : shape) {
    if (!s.is_number_integer() || s.get<long long>() < 1) throw DataError("json: shape entries must be positive integers");
  }
  const Index n = shape[0].get<Index>(), m1 = shape[1].get<Index>(), m2 = shape[2].get<Index>();
  const Json& tensor = j["tensor"];
  if (!tensor.is_array() || static_cast<Index>(tensor.size()) != n) {
    throw DimensionMismatch("json: tensor must hold n = " + std::to_string(n) + " matrices");
  }
  Matrix rows(n, m1 * m2);
  for (Index i = 0; i < n; ++i) {
    const Matrix x = json_to_matrix(tensor[static_cast<std::size_t>(i)], "tensor");
    if (x.rows() != m1 || x.cols() != m2) {
      throw DimensionMismatch("json: tensor slice " + std::to_string(i) + " is not " + std::to_string(m1) + "x" +
                              std::to_string(m2));
    }
    rows.row(i) = vec(x).transpose();
  }
  const Vector y = json_to_vector(j["response"], "response");
  require_same_size(n, y.size(), "json: response length");
  TuningOverrides t = overrides;
  if (!t.sigma && j.contains("sigma")) t.sigma = detail::json_number(j["sigma"], "sigma");
  if (!t.lambda && j.contains("lambda")) t.lambda = detail::json_number(j["lambda"], "lambda");
  if (!t.tau && j.contains("tau")) t.tau = detail::json_number(j["tau"], "tau");
  const double sigma = t.sigma.value_or(1.0);
  const double lambda = t.lambda ? *t.lambda : calibrate_lambda_matrix(sigma, v_x(rows, m1, m2), n, m1, m2, 0.05);
  const double tau = t.tau ? *t.tau : (sigma > 0.0 ? sigma * sigma / static_cast<double>(n * m1 * m2) : 1.0);
  return {std::move(rows), y, m1, m2, sigma, lambda, tau};
}

inline TraceProblem load_trace_problem_json(const std::string& path, const TuningOverrides& overrides = {}) {
  return trace_problem_from_json(parse_json_text(detail::read_text(path), path), overrides);
}

}  // namespace ewa

#endif  // EWA_TRACE_HPP
