#include <cmath>
#include <random>

#include "doctest.h"
#include "dtrval/dgp.hpp"
#include "dtrval/error.hpp"
#include "dtrval/odtr.hpp"
#include "support.hpp"

using namespace dtrval;
using testsupport::expit;

namespace {

// Independent transcription of the continuous process's blip.
double blip_oracle(double w1, double w2, double w3) {
  auto p = [&](double a) {
    return 0.5 * expit(1.0 - w1 * w1 + 3.0 * w2 + 5.0 * w3 * w3 * a - 4.45 * a) +
           0.5 * expit(-0.5 - w3 + 2.0 * w1 * w2 + 3.0 * std::abs(w2) * a - 1.5 * a);
  };
  return p(1.0) - p(0.0);
}

double binary_blip_oracle(int w1, int w2) {
  const double base = -0.3 + 0.8 * w1 - 0.5 * w2;
  return expit(base + 0.6 - 1.2 * w1 + 0.4 * w1 * w2) - expit(base);
}

NuisanceFit true_nuisance(const Dataset& d, const Dgp& dgp) {
  return testsupport::make_nuisance(
      0.5, [&dgp](int a, const Eigen::VectorXd& w) { return dgp.mean_outcome(w.transpose(), a)[0]; }, d);
}

Eigen::MatrixXd random_blips(Index n, Index k, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd b(n, k);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < k; ++j) b(i, j) = normal(rng);
  }
  return b;
}

}  // namespace

TEST_CASE("pseudo-outcome by hand") {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(2, 1);
  Eigen::VectorXi a(2);
  a << 1, 0;
  Eigen::VectorXd y(2);
  y << 1, 1;
  const Dataset d(w, a, y);
  const NuisanceFit nf = testsupport::make_nuisance(0.25, [](int t, const Eigen::VectorXd&) { return t ? 0.6 : 0.2; }, d);
  const Eigen::VectorXd D = pseudo_outcome(d, nf);
  // Row 0: (1/0.25)(1 - 0.6) + 0.4; row 1: -(1/0.75)(1 - 0.2) + 0.4.
  CHECK(D[0] == doctest::Approx(1.6 + 0.4));
  CHECK(D[1] == doctest::Approx(-0.8 / 0.75 + 0.4));
}

TEST_CASE("pseudo-outcome reduces to the Q blip when residuals vanish") {
  const Dataset base = testsupport::random_dataset(50, 2, 3);
  auto q = [](int a, const Eigen::VectorXd& w) { return expit(0.2 * w[0] + 0.5 * a); };
  Eigen::VectorXd y(50);
  for (Index i = 0; i < 50; ++i) y[i] = q(base.treatment()[i], base.covariates().row(i).transpose());
  const Dataset d(base.covariates(), base.treatment(), y);
  const NuisanceFit nf = testsupport::make_nuisance(0.3, q, d);
  const Eigen::VectorXd D = pseudo_outcome(d, nf);
  const Eigen::VectorXd expected = nf.q(1, d.covariates()) - nf.q(0, d.covariates());
  CHECK((D - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("pseudo-outcome cell means recover the binary-covariate blip") {
  const BinaryCovariateDgp dgp;
  const Dataset d = draw_dgp(1000000, 41, dgp).dataset;
  const Eigen::VectorXd D = pseudo_outcome(d, true_nuisance(d, dgp));
  double sum[2][2] = {{0, 0}, {0, 0}};
  double count[2][2] = {{0, 0}, {0, 0}};
  for (Index i = 0; i < D.size(); ++i) {
    const int w1 = static_cast<int>(d.covariates()(i, 0));
    const int w2 = static_cast<int>(d.covariates()(i, 1));
    sum[w1][w2] += D[i];
    count[w1][w2] += 1;
  }
  for (int w1 : {0, 1}) {
    for (int w2 : {0, 1}) CHECK(std::abs(sum[w1][w2] / count[w1][w2] - binary_blip_oracle(w1, w2)) < 0.01);
  }
}

TEST_CASE("the true rule matches an independent blip transcription") {
  const TreatmentRule rule = oracle_true_rule();
  Rng rng(8);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd w(1000, 4);
  for (Index i = 0; i < w.rows(); ++i) {
    for (Index j = 0; j < 4; ++j) w(i, j) = normal(rng);
  }
  const Eigen::VectorXd b = rule.blip(w);
  const Eigen::VectorXi d = rule.evaluate_rows(w);
  for (Index i = 0; i < w.rows(); ++i) {
    const double oracle = blip_oracle(w(i, 0), w(i, 1), w(i, 2));
    CHECK(std::abs(b[i] - oracle) < 1e-14);
    CHECK(d[i] == (oracle > 0 ? 1 : 0));
  }
  // Treatment is harmful at the origin.
  CHECK(blip_oracle(0, 0, 0) < 0.0);
  CHECK(rule.evaluate(Eigen::VectorXd::Zero(4)) == 0);
}

TEST_CASE("iptw rule value by hand") {
  Eigen::VectorXi rule(4), a(4);
  rule << 1, 0, 1, 0;
  a << 1, 1, 0, 0;
  Eigen::VectorXd y(4), g(4);
  y << 1, 1, 1, 0.5;
  g << 0.5, 0.5, 0.25, 0.25;
  // Matches in rows 0 and 3: (1/0.5 + 0.5/0.25) / 4.
  CHECK(iptw_rule_value(rule, a, y, g) == doctest::Approx(1.0));
}

TEST_CASE("augmented value table by hand") {
  Eigen::VectorXi a(3), rule(3);
  a << 1, 0, 1;
  rule << 1, 1, 0;
  Eigen::VectorXd y(3), g(3), q0(3), q1(3);
  y << 1, 0, 0;
  g << 0.5, 0.5, 0.25;
  q0 << 0.2, 0.4, 0.1;
  q1 << 0.6, 0.3, 0.5;
  const Eigen::MatrixXd t = dr_value_table(a, y, g, q0, q1);
  // Row 0 follows treatment: 0.6 + 0.4 / 0.5.  Row 1 is untreated but the
  // rule treats: Q(1) = 0.3.  Row 2 is treated but the rule does not: Q(0) = 0.1.
  CHECK(table_rule_value(t, rule) == doctest::Approx((1.4 + 0.3 + 0.1) / 3.0).epsilon(1e-14));
  // With Q = 0 it is the IPTW value.
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(3);
  CHECK(table_rule_value(dr_value_table(a, y, g, zero, zero), rule) ==
        doctest::Approx(iptw_rule_value(rule, a, y, g)).epsilon(1e-14));
  for (ValueRisk r : {ValueRisk::iptw, ValueRisk::dr, ValueRisk::blip_mse}) CHECK(value_risk_from_string(to_string(r)) == r);
  CHECK_THROWS_AS(value_risk_from_string("mse"), InvalidConfiguration);
}

TEST_CASE("alpha search: one candidate, two-candidate grid oracle, and the simplex") {
  Rng rng(5);
  std::uniform_real_distribution<double> unif;
  for (int trial = 0; trial < 30; ++trial) {
    const Index n = 150;
    const Index k = 1 + trial % 6;
    const Eigen::MatrixXd b = random_blips(n, k, 100 + static_cast<std::uint64_t>(trial));
    Eigen::VectorXi a(n);
    Eigen::VectorXd y(n);
    const Eigen::VectorXd g = Eigen::VectorXd::Constant(n, 0.5);
    for (Index i = 0; i < n; ++i) {
      a[i] = unif(rng) < 0.5;
      y[i] = unif(rng) < expit(b(i, 0) * (a[i] - 0.5)) ? 1.0 : 0.0;
    }
    OdtrOptions opts;
    opts.seed = static_cast<std::uint64_t>(trial);
    const Eigen::VectorXd alpha = search_alpha(b, a, y, g, opts);
    REQUIRE(alpha.size() == k);
    CHECK(alpha.minCoeff() >= 0.0);
    CHECK(std::abs(alpha.sum() - 1.0) < 1e-10);
    const double best = cv_rule_value(b, alpha, a, y, g);
    for (Index j = 0; j < k; ++j) CHECK(best >= cv_rule_value(b, Eigen::VectorXd::Unit(k, j), a, y, g) - 1e-10);
    if (k == 1) CHECK(alpha[0] == 1.0);
    if (k == 2) {
      double grid_best = -INFINITY;
      for (int s = 0; s <= 20; ++s) {
        Eigen::VectorXd v(2);
        v << s / 20.0, 1.0 - s / 20.0;
        grid_best = std::max(grid_best, cv_rule_value(b, v, a, y, g));
      }
      CHECK(best == doctest::Approx(grid_best).epsilon(1e-12));
    }
    opts.mode = EnsembleMode::discrete;
    const Eigen::VectorXd vertex = search_alpha(b, a, y, g, opts);
    CHECK(vertex.maxCoeff() == 1.0);
    CHECK(vertex.sum() == 1.0);
  }
}

TEST_CASE("a mean-only library gives a static rule") {
  const Dataset d = testsupport::random_dataset(200, 2, 12);
  const NuisanceFit nf = testsupport::make_nuisance(0.5, [](int a, const Eigen::VectorXd& w) { return expit(w[0] + a); }, d);
  const OdtrFit fit = fit_odtr({LearnerSpec::mean()}, d, nf, make_folds(200, 5, 1));
  CHECK(fit.alpha[0] == 1.0);
  const Eigen::VectorXi assign = fit.rule.evaluate_rows(d.covariates());
  CHECK((assign.array() == assign[0]).all());
  // The link is forced to identity, so the blip equals the mean pseudo-outcome.
  const double expected = pseudo_outcome(d, nf).mean();
  CHECK(fit.rule.blip(d.covariates())[0] == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("fit_odtr rule agrees with its blip and respects fold hygiene") {
  const Dataset d = draw_dgp(300, 9).dataset;
  const NuisanceFit nf = true_nuisance(d, continuous_dgp());
  const FoldScheme folds = make_folds(300, 5, 4);
  const std::vector<LearnerSpec> lib{LearnerSpec::glm(), LearnerSpec::univariate(1), LearnerSpec::mean()};
  const OdtrFit fit = fit_odtr(lib, d, nf, folds);
  CHECK(std::abs(fit.alpha.sum() - 1.0) < 1e-10);
  const Eigen::VectorXd b = fit.rule.blip(d.covariates());
  const Eigen::VectorXi r = fit.rule.evaluate_rows(d.covariates());
  for (Index i = 0; i < b.size(); ++i) CHECK(r[i] == (b[i] > 0 ? 1 : 0));
  for (Index j = 0; j < fit.alpha.size(); ++j) CHECK(fit.ensemble_cv_value >= fit.cv_values[j] - 1e-10);

  REQUIRE(fit.fold_provenance.size() == 5);
  for (int v = 0; v < 5; ++v) {
    const auto& prov = fit.fold_provenance[static_cast<std::size_t>(v)];
    CHECK_FALSE(prov.whole_sample);
    CHECK(prov.fold == v);
    CHECK(prov.training_rows == folds.training_rows(v));
  }

  // Changing outcomes in fold 0 cannot move fold 0's out-of-fold blips.
  Eigen::VectorXd y = d.outcome();
  for (std::size_t i : folds.validation_rows(0)) y[static_cast<Index>(i)] = 1.0 - y[static_cast<Index>(i)];
  const Dataset perturbed(d.covariates(), d.treatment(), y);
  const OdtrFit other = fit_odtr(lib, perturbed, true_nuisance(perturbed, continuous_dgp()), folds);
  for (std::size_t i : folds.validation_rows(0)) {
    CHECK((other.cv_blips.row(static_cast<Index>(i)) - fit.cv_blips.row(static_cast<Index>(i))).norm() == 0.0);
  }
}

TEST_CASE("alternative metalearner criteria") {
  const Dataset d = draw_dgp(300, 19).dataset;
  const NuisanceFit nf = true_nuisance(d, continuous_dgp());
  const FoldScheme folds = make_folds(300, 5, 2);
  const std::vector<LearnerSpec> lib{LearnerSpec::glm(), LearnerSpec::univariate(1), LearnerSpec::mean()};
  OdtrOptions opts;
  opts.risk = ValueRisk::dr;
  const OdtrFit dr = fit_odtr(lib, d, nf, folds, opts);
  const Eigen::MatrixXd table = dr_value_table(d.treatment(), d.outcome(), nf.g(d.treatment(), d.covariates()),
                                               nf.q(0, d.covariates()), nf.q(1, d.covariates()));
  CHECK(dr.ensemble_cv_value == doctest::Approx(cv_rule_value(dr.cv_blips, dr.alpha, table)).epsilon(1e-14));
  for (Index j = 0; j < 3; ++j) CHECK(dr.ensemble_cv_value >= dr.cv_values[j] - 1e-10);

  // Squared-error weights are the simplex least squares fit to the pseudo-outcome.
  opts.risk = ValueRisk::blip_mse;
  const OdtrFit mse = fit_odtr(lib, d, nf, folds, opts);
  const Eigen::VectorXd expected = simplex_least_squares(mse.cv_blips, pseudo_outcome(d, nf));
  CHECK((mse.alpha - expected).cwiseAbs().maxCoeff() < 1e-12);
  opts.mode = EnsembleMode::discrete;
  const OdtrFit pick = fit_odtr(lib, d, nf, folds, opts);
  Index best = 0;
  (pick.cv_blips.colwise() - pseudo_outcome(d, nf)).colwise().squaredNorm().minCoeff(&best);
  CHECK(pick.alpha[best] == 1.0);
}

TEST_CASE("ensemble blip is the weighted candidate sum and checks dimension") {
  const Dataset d = testsupport::random_dataset(100, 3, 2);
  const NuisanceFit nf = testsupport::make_nuisance(0.5, [](int a, const Eigen::VectorXd& w) { return expit(w[1] * a); }, d);
  const OdtrFit fit = fit_odtr(odtr_library_preset(LibraryConfig::least, 3), d, nf, make_folds(100, 4, 2));
  Eigen::VectorXd manual = Eigen::VectorXd::Zero(100);
  for (std::size_t j = 0; j < fit.candidates.size(); ++j) {
    if (fit.alpha[static_cast<Index>(j)] == 0.0) continue;
    CHECK(fit.candidates[j].spec.link == Link::identity);
    manual += fit.alpha[static_cast<Index>(j)] * fit.candidates[j].fit->predict(Design(d.covariates()));
  }
  CHECK((fit.rule.blip(d.covariates()) - manual).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(fit.rule.blip(Eigen::MatrixXd::Zero(2, 5)), ShapeError);
  CHECK(fit.to_json()["candidates"].size() == fit.candidates.size());
}

TEST_CASE("odtr presets use the identity link") {
  for (auto c : {LibraryConfig::least, LibraryConfig::moderate, LibraryConfig::most}) {
    for (const auto& s : odtr_library_preset(c)) CHECK(s.link == Link::identity);
  }
}
