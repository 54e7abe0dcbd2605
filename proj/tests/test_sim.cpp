#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"
#include "dtrval/dgp.hpp"
#include "dtrval/error.hpp"
#include "dtrval/odtr.hpp"
#include "dtrval/study.hpp"
#include "support.hpp"

using namespace dtrval;
using testsupport::expit;

namespace {

double p_oracle(double w1, double w2, double w3, int a) {
  return 0.5 * expit(1.0 - w1 * w1 + 3.0 * w2 + 5.0 * w3 * w3 * a - 4.45 * a) +
         0.5 * expit(-0.5 - w3 + 2.0 * w1 * w2 + 3.0 * std::abs(w2) * a - 1.5 * a);
}

// Enumerates the four covariate cells of the binary process.
double binary_enumeration(const TreatmentRule& rule) {
  const double p1[2] = {0.6, 0.4};
  const double p2[2] = {0.3, 0.7};
  double total = 0.0;
  for (int w1 : {0, 1}) {
    for (int w2 : {0, 1}) {
      Eigen::VectorXd w(2);
      w << w1, w2;
      const int a = rule.evaluate(w);
      total += p1[w1] * p2[w2] * expit(-0.3 + 0.8 * w1 - 0.5 * w2 + a * (0.6 - 1.2 * w1 + 0.4 * w1 * w2));
    }
  }
  return total;
}

StudyConfig tiny(StudyTarget target) {
  StudyConfig c;
  c.name = "tiny";
  c.target = target;
  c.replications = 3;
  c.n = 120;
  c.folds = 3;
  c.master_seed = 11;
  c.oracle_draws = 2000;
  c.fixed_truth_draws = 5000;
  c.q_library = {LearnerSpec::glm(), LearnerSpec::mean()};
  c.odtr_library = {LearnerSpec::glm(Link::identity), LearnerSpec::mean(Link::identity)};
  return c;
}

ReplicationRecord record(int r, double estimate, double truth, double lo, double hi) {
  ReplicationRecord rec;
  rec.replication = r;
  rec.estimator = EstimatorKind::tmle;
  rec.estimate = estimate;
  rec.truth = truth;
  rec.ci = Interval{lo, hi};
  return rec;
}

}  // namespace

TEST_CASE("outcome probability at the origin") {
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(4);
  CHECK(outcome_probability(zero, 0) == doctest::Approx(0.5 * expit(1.0) + 0.5 * expit(-0.5)).epsilon(1e-15));
  CHECK(outcome_probability(zero, 1) == doctest::Approx(0.5 * expit(-3.45) + 0.5 * expit(-2.0)).epsilon(1e-15));
}

TEST_CASE("outcome probability matches an independent transcription") {
  Rng rng(3);
  const Eigen::MatrixXd w = continuous_dgp().draw_covariates(500, rng);
  for (int a : {0, 1}) {
    const Eigen::VectorXd p = outcome_probability(w, a);
    for (Index i = 0; i < w.rows(); ++i) CHECK(std::abs(p[i] - p_oracle(w(i, 0), w(i, 1), w(i, 2), a)) < 1e-15);
  }
}

TEST_CASE("oracle_value agrees with an independent Monte Carlo") {
  // Independent draws and the transcribed p; both estimates have SE < 0.001.
  Rng rng(123);
  std::normal_distribution<double> normal;
  const int m = 200000;
  double s1 = 0.0;
  for (int i = 0; i < m; ++i) {
    const double w1 = normal(rng), w2 = normal(rng), w3 = normal(rng);
    (void)normal(rng);
    s1 += p_oracle(w1, w2, w3, 1);
  }
  const OracleValue ours = oracle_value(TreatmentRule::treat_all(), m, 7);
  CHECK(std::abs(ours.value - s1 / m) < 4.0 * std::sqrt(2.0) * ours.std_error);
  CHECK(ours.std_error > 0.0);
}

TEST_CASE("binary process: oracle_value matches exact enumeration for five random rules") {
  const BinaryCovariateDgp dgp;
  Rng rng(9);
  std::bernoulli_distribution coin(0.5);
  for (int k = 0; k < 5; ++k) {
    // A random lookup-table rule over the four cells.
    const int table[2][2] = {{coin(rng), coin(rng)}, {coin(rng), coin(rng)}};
    const TreatmentRule rule = testsupport::function_rule([table](const Eigen::VectorXd& w) {
      return table[static_cast<int>(w[0])][static_cast<int>(w[1])] ? 1.0 : -1.0;
    });
    const double exact = binary_enumeration(rule);
    CHECK(dgp.exact_value(rule) == doctest::Approx(exact).epsilon(1e-14));
    const OracleValue mc = oracle_value(rule, 1000000, 100 + static_cast<std::uint64_t>(k), dgp);
    CHECK(std::abs(mc.value - exact) <= 3.0 * mc.std_error);
  }
}

TEST_CASE("oracle draws are seed-determined") {
  const TreatmentRule rule = oracle_true_rule();
  CHECK(oracle_value(rule, 50000, 5).value == oracle_value(rule, 50000, 5).value);
  CHECK(oracle_value(rule, 50000, 5).value != oracle_value(rule, 50000, 6).value);
  const OraclePanel panel(continuous_dgp(), 30000, 5);
  CHECK(panel.value(rule).value == doctest::Approx(panel.value(rule.evaluate_rows(panel.covariates())).value));
  CHECK(panel.value(TreatmentRule::treat_all()).value ==
        doctest::Approx(outcome_probability(panel.covariates(), 1).mean()).epsilon(1e-12));
}

TEST_CASE("draw_dgp is reproducible and balanced") {
  const Dataset a = draw_dgp(2000, 4).dataset;
  const Dataset b = draw_dgp(2000, 4).dataset;
  CHECK(a.covariates() == b.covariates());
  CHECK(a.outcome() == b.outcome());
  CHECK(std::abs(a.treatment_real().mean() - 0.5) < 0.05);
  CHECK(a.covariates().cols() == 4);
}

TEST_CASE("summarize: mse identity and hand-computed coverage") {
  StudyConfig c = tiny(StudyTarget::known_rule);
  std::vector<ReplicationRecord> recs{record(0, 0.5, 0.45, 0.4, 0.6), record(1, 0.3, 0.45, 0.25, 0.35),
                                      record(2, 0.44, 0.45, 0.4, 0.5)};
  const PerformanceRow row = summarize(recs, c, EstimatorKind::tmle);
  CHECK(row.bias == doctest::Approx((0.05 - 0.15 - 0.01) / 3.0));
  CHECK(row.mse == doctest::Approx((0.0025 + 0.0225 + 0.0001) / 3.0));
  CHECK(row.mse == doctest::Approx(row.bias * row.bias + row.variance).epsilon(1e-12));
  CHECK(*row.coverage == doctest::Approx(2.0 / 3.0));
  CHECK(*row.mean_ci_width == doctest::Approx((0.2 + 0.1 + 0.1) / 3.0));

  const PerformanceRow one = summarize({record(0, 0.5, 0.45, 0.4, 0.6)}, c, EstimatorKind::tmle);
  CHECK(one.variance == 0.0);
  CHECK((*one.coverage == 0.0 || *one.coverage == 1.0));
}

TEST_CASE("run_study is deterministic across runs and thread counts") {
  StudyConfig c = tiny(StudyTarget::known_rule);
  const StudyResult a = run_study(c);
  c.threads = 2;
  const StudyResult b = run_study(c);
  REQUIRE(a.rows.size() == 5);
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].to_json().dump() == b.rows[i].to_json().dump());
    CHECK(a.rows[i].mse == doctest::Approx(a.rows[i].bias * a.rows[i].bias + a.rows[i].variance).epsilon(1e-12));
    CHECK(a.rows[i].truth_sd == 0.0);
  }
  std::ostringstream ca, cb;
  write_performance_csv(ca, a.rows);
  write_performance_csv(cb, b.rows);
  CHECK(ca.str() == cb.str());
  CHECK(ca.str().rfind("study,", 0) == 0);
}

TEST_CASE("data-adaptive truths vary across replications") {
  const StudyResult r = run_study(tiny(StudyTarget::data_adaptive));
  std::set<double> specific, split;
  for (const auto& rec : r.records) {
    if (rec.truth_kind == TruthKind::sample_specific) specific.insert(rec.truth);
    if (rec.truth_kind == TruthKind::sample_split) split.insert(rec.truth);
  }
  CHECK(specific.size() > 1);
  CHECK(split.size() > 1);
  for (const auto& row : r.rows) {
    CHECK(row.truth_kind != TruthKind::fixed);
    CHECK(row.mse == doctest::Approx(row.bias * row.bias + row.variance).epsilon(1e-12));
  }
}

TEST_CASE("invalid study configurations are rejected") {
  CHECK_THROWS_AS(StudyConfig::from_json({{"target", "data_adaptive"},
                                          {"rows", {{{"estimator", "cv_tmle"}, {"truth", "sample_specific"}}}}}),
                  InvalidConfiguration);
  CHECK_THROWS_AS(StudyConfig::from_json({{"target", "known_rule"}, {"rows", {{{"estimator", "tmle"}, {"truth", "sample_split"}}}}}),
                  InvalidConfiguration);
  CHECK_THROWS_AS(StudyConfig::from_json({{"replications", 0}}), InvalidConfiguration);
  CHECK_THROWS_AS(StudyConfig::from_json({{"replicates", 10}}), InvalidConfiguration);
  CHECK_THROWS_AS(StudyConfig::from_json({{"n", "many"}}), InvalidConfiguration);
  CHECK_THROWS_AS(StudyConfig::from_json({{"q_library", {"glm", "forest"}}}), InvalidConfiguration);
  CHECK_THROWS_AS(StudyConfig::from_json({{"rule_risk", "value"}}), InvalidConfiguration);
  CHECK(StudyConfig::from_json({{"rule_risk", "dr"}}).rule_risk == ValueRisk::dr);
  const StudyConfig ok = StudyConfig::from_json({{"target", "data_adaptive"}, {"library", "most"}});
  CHECK(ok.effective_rows().size() == 5);
  CHECK(StudyConfig::from_json(ok.to_json()).to_json() == ok.to_json());
}
