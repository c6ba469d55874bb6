#include "ewa/experiment.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <string>

namespace {

using namespace ewa;

const BoundReport& find(const ExperimentResult& r, const std::string& name) {
  for (const auto& report : r.reports) {
    if (report.name == name) return report;
  }
  throw std::runtime_error("missing report " + name);
}

Index count_lines(const std::string& text) { return static_cast<Index>(std::count(text.begin(), text.end(), '\n')); }

TEST(ExperimentSpec, JsonRoundTripAndHash) {
  ExperimentSpec s;
  s.study = Study::sure;
  s.n = 10;
  s.p = 5;
  s.sparsity = 2;
  s.seed = 99;
  s.lambda_grid = {0.5, 1.0};
  const ExperimentSpec back = ExperimentSpec::from_json(s.to_json());
  EXPECT_EQ(back.to_json(), s.to_json());
  EXPECT_EQ(back.hash(), s.hash());
  ExperimentSpec other = s;
  other.seed = 100;
  EXPECT_NE(other.hash(), s.hash());
  EXPECT_EQ(s.hash().size(), 16u);
}

TEST(ExperimentSpec, Validation) {
  EXPECT_THROW(ExperimentSpec::from_json(Json{{"bogus", 1}}), DataError);
  EXPECT_THROW(ExperimentSpec::from_json(Json{{"design", "triangular"}}), DataError);
  EXPECT_THROW(ExperimentSpec::from_json(Json{{"n", 10}, {"p", 20}}), InvalidArgument);
  EXPECT_THROW(ExperimentSpec::from_json(Json{{"sparsity", 70}}), InvalidArgument);
  const ExperimentSpec m = ExperimentSpec::from_json(Json{{"scenario", "matrix"}, {"sparsity", 2}});
  EXPECT_EQ(m.design, DesignKind::entry_sampling);
  EXPECT_DOUBLE_EQ(m.tau(), 1.0 / (64.0 * 64.0));
}

TEST(Designs, RescaledAndDuplicated) {
  ExperimentSpec s;
  s.n = 30;
  s.p = 6;
  s.design = DesignKind::duplicated_columns;
  const Matrix x = make_vector_design(s);
  for (Index j = 0; j < 6; ++j) EXPECT_NEAR(x.col(j).squaredNorm() / 30.0, 1.0, 1e-12);
  EXPECT_EQ(x.col(0), x.col(1));
  s.design = DesignKind::orthonormal;
  const Matrix q = make_vector_design(s);
  EXPECT_LT((q.transpose() * q / 30.0 - Matrix::Identity(6, 6)).cwiseAbs().maxCoeff(), 1e-12);
  Engine rng = make_engine(3);
  const Coefficients beta = sparse_signal(rng, 20, 5);
  EXPECT_EQ((beta.array() != 0.0).count(), 5);
  EXPECT_EQ(beta.cwiseAbs().maxCoeff(), 1.0);
  const Matrix b = low_rank_signal(rng, 5, 4, 2);
  const Vector sv = singular_values(b);
  EXPECT_NEAR(sv(0), 1.0, 1e-12);
  EXPECT_NEAR(sv(1), 1.0, 1e-12);
  EXPECT_LT(sv(2), 1e-12);
}

TEST(OracleVector, OrthonormalCoverage) {
  ExperimentSpec s;
  s.n = 32;
  s.p = 32;
  s.sparsity = 3;
  s.replications = 200;
  s.seed = 5;
  const auto result = run_oracle_check_vector(s);
  EXPECT_TRUE(find(result, "soi_failure_rate").passed);
  EXPECT_TRUE(find(result, "soi2_in_event").passed);
  EXPECT_TRUE(find(result, "h_in_range").passed);
  EXPECT_EQ(find(result, "soi_failure_rate").context.at("kappa_mode"), "exact (orthonormal)");
  EXPECT_EQ(count_lines(result.csv), 201);
  EXPECT_EQ(result.summary["spec_hash"], s.hash());
}

TEST(OracleVector, NoiselessRunSatisfiesBound) {
  ExperimentSpec s;
  s.n = 20;
  s.p = 8;
  s.sparsity = 2;
  s.sigma = 0.0;
  s.tau_rule = TauRule::explicit_value;
  s.tau_value = 1e-10;
  s.replications = 100;
  s.design = DesignKind::gaussian_iid;
  s.n_samples = 300;
  s.burn_in = 50;
  const auto result = run_oracle_check_vector(s);
  EXPECT_EQ(find(result, "soi_failure_rate").lhs, 0.0);
  EXPECT_EQ(find(result, "soi_failure_rate").context.at("kappa_mode"), "exact");
}

TEST(OracleVector, TauRulesChangeTemperatureTerm) {
  ExperimentSpec s;
  s.n = 32;
  s.p = 32;
  s.replications = 100;
  s.tau_rule = TauRule::sigma2_over_n;
  const double big = std::stod(find(run_oracle_check_vector(s), "soi_failure_rate").context.at("tau_term_ratio"));
  s.tau_rule = TauRule::sigma2_over_np;
  const double small = std::stod(find(run_oracle_check_vector(s), "soi_failure_rate").context.at("tau_term_ratio"));
  EXPECT_NEAR(big / small, 32.0, 1e-9);
  EXPECT_LT(small, 0.1);
}

TEST(OracleVector, DeterministicAcrossThreadCounts) {
  ExperimentSpec s;
  s.n = 16;
  s.p = 16;
  s.replications = 100;
  s.seed = 8;
  s.threads = 1;
  const auto a = run_oracle_check_vector(s);
  s.threads = 3;
  const auto b = run_oracle_check_vector(s);
  EXPECT_EQ(a.csv, b.csv);
}

TEST(OracleMatrix, SmallInstance) {
  ExperimentSpec s;
  s.scenario = Scenario::matrix;
  s.design = DesignKind::entry_sampling;
  s.n = 60;
  s.m1 = 3;
  s.m2 = 3;
  s.sparsity = 1;
  s.replications = 100;
  s.n_samples = 400;
  s.burn_in = 100;
  const auto result = run_oracle_check_matrix(s, 300);
  EXPECT_TRUE(find(result, "theorem_slow_rate_failure_rate").passed);
  EXPECT_TRUE(find(result, "soi2_slow_rate_in_event").passed);
  EXPECT_TRUE(find(result, "matrix_h_in_range").passed);
  EXPECT_TRUE(find(result, "matrix_variance_bound").passed);
  EXPECT_EQ(find(result, "theorem_fast_rate_failure_rate").context.at("asserted"), "false");
  EXPECT_EQ(count_lines(result.csv), 101);
}

TEST(SureStudy, UnbiasedOnOrthonormalDesign) {
  ExperimentSpec s;
  s.n = 5;
  s.p = 5;
  s.sparsity = 2;
  s.replications = 1000;
  s.seed = 12;
  const auto result = run_sure_study(s, {0.3, 0.6, 1.2}, {0.2, 0.02});
  ASSERT_EQ(result.reports.size(), 12u);
  for (const auto& r : result.reports) EXPECT_TRUE(r.passed) << r.name << " " << r.context.at("lambda");
  EXPECT_EQ(count_lines(result.csv), 7);
  EXPECT_GE(result.summary["max_adjacent_jump_lasso"].get<double>(), 0.0);
}

TEST(SureStudy, NoiselessEqualsResidual) {
  // sigma = 0 removes every correction term.
  ExperimentSpec s;
  s.n = 6;
  s.p = 4;
  s.sigma = 0.0;
  s.tau_rule = TauRule::explicit_value;
  s.tau_value = 0.01;
  s.replications = 3;
  const auto result = run_sure_study(s, {0.5}, {0.01});
  for (const auto& r : result.reports) EXPECT_NEAR(r.lhs, 0.0, 1e-12);
}

TEST(Interpolation, ClosedFormPathShrinksTowardLasso) {
  Engine rng = make_engine(13);
  NormalSource normal;
  const Index n = 40, p = 6;
  const Matrix x = std::sqrt(40.0) * random_orthonormal_columns(rng, n, p);
  const RegressionProblem problem(x, normal.vector(rng, n), 1.0, 0.3, 1.0);
  const double bayes = 1.0 / 40.0;
  const auto path = run_interpolation_path(problem, {bayes, bayes / 10, bayes / 100, bayes * 1e-8});
  EXPECT_EQ(path.front().label, "bayesian-lasso");
  EXPECT_EQ(path.back().label, "near-lasso");
  EXPECT_TRUE(interpolation_monotone(path));
  EXPECT_LT(path.back().distance, 1e-4);
  EXPECT_THROW(run_interpolation_path(problem, {0.1, 0.2}), InvalidArgument);
}

TEST(Concentration, OrthonormalReplications) {
  ExperimentSpec s;
  s.n = 16;
  s.p = 16;
  s.sparsity = 2;
  s.replications = 10;
  s.n_samples = 2000;
  s.burn_in = 100;
  const auto result = run_concentration_study(s);
  for (const auto& r : result.reports) EXPECT_TRUE(r.passed) << r.name;
}

TEST(NoiseTail, BelowDelta) {
  ExperimentSpec s;
  s.n = 64;
  s.p = 64;
  const auto result = run_noise_tail_study(s, 2000);
  EXPECT_TRUE(result.reports.front().passed);
}

TEST(Outputs, WrittenToDirectory) {
  ExperimentSpec s;
  s.study = Study::noise_tail;
  s.replications = 100;
  const auto result = run_experiment(s);
  const auto dir = std::filesystem::temp_directory_path() / "ewa_experiment_test";
  write_experiment_outputs(result, dir.string());
  std::ifstream csv(dir / "report.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "draws,exceedances,frequency,delta,spec_hash");
  std::ifstream summary(dir / "summary.json");
  const Json j = Json::parse(summary);
  EXPECT_EQ(j["spec_hash"], s.hash());
  std::filesystem::remove_all(dir);
}

}  // namespace
