#ifndef EWA_IO_HPP
#define EWA_IO_HPP

#include "ewa/core.hpp"
#include "ewa/model.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace ewa {

using Json = nlohmann::json;

namespace detail {

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline double parse_double(std::string_view token, const std::string& where) {
  token = trim(token);
  if (!token.empty() && token.front() == '+') token.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size() || token.empty()) {
    throw DataError(where + ": cannot parse number '" + std::string(token) + "'");
  }
  if (!std::isfinite(value)) throw DataError(where + ": non-finite entry");
  return value;
}

inline std::vector<std::vector<double>> parse_csv(const std::string& text, bool header,
                                                  const std::string& where) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (header && line_no == 1) continue;
    if (trim(line).empty()) continue;
    std::vector<double> row;
    std::string_view rest(line);
    for (;;) {
      const auto comma = rest.find(',');
      row.push_back(parse_double(rest.substr(0, comma), where + ":" + std::to_string(line_no)));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix rows_to_matrix(const std::vector<std::vector<double>>& rows, const std::string& where) {
  if (rows.empty()) throw DataError(where + ": no data rows");
  const std::size_t cols = rows.front().size();
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(cols));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != cols) {
      throw DimensionMismatch(where + ": row " + std::to_string(i + 1) + " has " +
                              std::to_string(rows[i].size()) + " entries, expected " +
                              std::to_string(cols));
    }
    for (std::size_t j = 0; j < cols; ++j) m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  }
  return m;
}

inline double json_number(const Json& j, const std::string& what) {
  if (!j.is_number()) throw DataError("json: " + what + " must be a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw DataError("json: " + what + " is not finite");
  return v;
}

}  // namespace detail

/// Optional tuning values; missing ones fall back to sigma = 1,
/// lambda = calibrate_lambda(sigma, n, p, 0.05) and tau = sigma^2 / n.
struct TuningOverrides {
  std::optional<double> sigma;
  std::optional<double> lambda;
  std::optional<double> tau;
};

inline RegressionProblem make_problem(Matrix design, Vector response, const TuningOverrides& t) {
  if (design.rows() < 1 || design.cols() < 1) throw DimensionMismatch("empty design");
  require_same_size(design.rows(), response.size(), "response length");
  const double sigma = t.sigma.value_or(1.0);
  const Index n = design.rows();
  const Index p = design.cols();
  const double lambda = t.lambda ? *t.lambda : calibrate_lambda(sigma, n, p, 0.05);
  const double tau = t.tau ? *t.tau : (sigma > 0.0 ? sigma * sigma / static_cast<double>(n) : 1.0);
  return {std::move(design), std::move(response), sigma, lambda, tau};
}

/// Design and response as two CSV files. The response file holds one value
/// per line or a single comma-separated row.
inline RegressionProblem load_problem_csv(const std::string& design_path,
                                          const std::string& response_path, bool header = false,
                                          const TuningOverrides& tuning = {}) {
  Matrix design = detail::rows_to_matrix(
      detail::parse_csv(detail::read_text(design_path), header, design_path), design_path);
  const auto rows = detail::parse_csv(detail::read_text(response_path), header, response_path);
  std::vector<double> values;
  for (const auto& r : rows) values.insert(values.end(), r.begin(), r.end());
  if (rows.size() > 1) {
    for (const auto& r : rows) {
      if (r.size() != 1) throw DataError(response_path + ": expected one value per line");
    }
  }
  Vector response = Eigen::Map<const Vector>(values.data(), static_cast<Index>(values.size()));
  return make_problem(std::move(design), std::move(response), tuning);
}

inline Matrix json_to_matrix(const Json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw DataError("json: " + what + " must be a non-empty array of rows");
  std::vector<std::vector<double>> rows;
  for (const auto& row : j) {
    if (!row.is_array()) throw DataError("json: " + what + " rows must be arrays");
    std::vector<double> r;
    for (const auto& v : row) r.push_back(detail::json_number(v, what));
    rows.push_back(std::move(r));
  }
  return detail::rows_to_matrix(rows, what);
}

inline Vector json_to_vector(const Json& j, const std::string& what) {
  if (!j.is_array()) throw DataError("json: " + what + " must be an array");
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Index>(i)) = detail::json_number(j[i], what);
  return v;
}

inline Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Json vector_to_json(const Vector& v) {
  Json out = Json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

inline Json parse_json_text(const std::string& text, const std::string& where) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw DataError(where + ": " + e.what());
  }
}

inline RegressionProblem problem_from_json(const Json& j, const TuningOverrides& overrides = {}) {
  if (!j.is_object()) throw DataError("json: problem must be an object");
  if (!j.contains("design") || !j.contains("response")) {
    throw DataError("json: problem needs 'design' and 'response'");
  }
  TuningOverrides t = overrides;
  if (!t.sigma && j.contains("sigma")) t.sigma = detail::json_number(j["sigma"], "sigma");
  if (!t.lambda && j.contains("lambda")) t.lambda = detail::json_number(j["lambda"], "lambda");
  if (!t.tau && j.contains("tau")) t.tau = detail::json_number(j["tau"], "tau");
  return make_problem(json_to_matrix(j["design"], "design"), json_to_vector(j["response"], "response"), t);
}

inline RegressionProblem load_problem_json(const std::string& path, const TuningOverrides& overrides = {}) {
  return problem_from_json(parse_json_text(detail::read_text(path), path), overrides);
}

/// JSON numbers are written in shortest round-trip form, so a save/load
/// cycle reproduces every double exactly.
inline Json problem_to_json(const RegressionProblem& problem) {
  return Json{{"design", matrix_to_json(problem.design())},
              {"response", vector_to_json(problem.response())},
              {"sigma", problem.sigma()},
              {"lambda", problem.lambda()},
              {"tau", problem.tau()}};
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << text;
  if (!out) throw DataError("write failed for " + path);
}

inline void save_problem_json(const RegressionProblem& problem, const std::string& path) {
  write_text(path, problem_to_json(problem).dump() + "\n");
}

/// printf("%.17g"), enough digits to round-trip a double.
inline std::string format_double(double x) {
  char buf[32];
  const int len = std::snprintf(buf, sizeof buf, "%.17g", x);
  return std::string(buf, static_cast<std::size_t>(len));
}

inline std::string matrix_to_csv(const Matrix& m) {
  std::string out;
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j > 0) out += ',';
      out += format_double(m(i, j));
    }
    out += '\n';
  }
  return out;
}

inline void save_problem_csv(const RegressionProblem& problem, const std::string& design_path,
                             const std::string& response_path) {
  write_text(design_path, matrix_to_csv(problem.design()));
  write_text(response_path, matrix_to_csv(problem.response()));
}

}  // namespace ewa

#endif  // EWA_IO_HPP
