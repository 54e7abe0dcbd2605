#include "dtrval/dgp.hpp"

#include <cmath>

#include "dtrval/error.hpp"
#include "dtrval/learners.hpp"

namespace dtrval {

double outcome_probability(const Eigen::VectorXd& w, int a) {
  if (w.size() < 4) throw ShapeError("the simulation process needs four covariates");
  const double ad = a;
  const double first = 1.0 - w[0] * w[0] + 3.0 * w[1] + 5.0 * w[2] * w[2] * ad - 4.45 * ad;
  const double second = -0.5 - w[2] + 2.0 * w[0] * w[1] + 3.0 * std::abs(w[1]) * ad - 1.5 * ad;
  return 0.5 * logistic(first) + 0.5 * logistic(second);
}

Eigen::VectorXd outcome_probability(const Eigen::MatrixXd& w, int a) {
  if (w.cols() < 4) throw ShapeError("the simulation process needs four covariates");
  Eigen::VectorXd out(w.rows());
  for (Index i = 0; i < w.rows(); ++i) out[i] = outcome_probability(Eigen::VectorXd(w.row(i).transpose()), a);
  return out;
}

Eigen::VectorXd true_blip(const Eigen::MatrixXd& w) {
  return outcome_probability(w, 1) - outcome_probability(w, 0);
}

Eigen::MatrixXd Dgp::draw_covariates(std::size_t m, Rng& rng) const {
  Eigen::MatrixXd w(static_cast<Index>(m), dim());
  for (Index i = 0; i < w.rows(); ++i) w.row(i) = draw_covariate_row(rng).transpose();
  return w;
}

Eigen::VectorXd ContinuousDgp::draw_covariate_row(Rng& rng) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd w(4);
  for (Index j = 0; j < 4; ++j) w[j] = normal(rng);
  return w;
}

namespace {

double binary_p(double w1, double w2, int a) {
  const double eta = -0.3 + 0.8 * w1 - 0.5 * w2 + a * (0.6 - 1.2 * w1 + 0.4 * w1 * w2);
  return logistic(eta);
}

constexpr double kBinaryP1 = 0.4;
constexpr double kBinaryP2 = 0.7;

}  // namespace

Eigen::VectorXd BinaryCovariateDgp::draw_covariate_row(Rng& rng) const {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::VectorXd w(2);
  w[0] = unif(rng) < kBinaryP1 ? 1.0 : 0.0;
  w[1] = unif(rng) < kBinaryP2 ? 1.0 : 0.0;
  return w;
}

Eigen::VectorXd BinaryCovariateDgp::mean_outcome(const Eigen::MatrixXd& w, int a) const {
  if (w.cols() != 2) throw ShapeError("the binary process has two covariates");
  Eigen::VectorXd out(w.rows());
  for (Index i = 0; i < w.rows(); ++i) out[i] = binary_p(w(i, 0), w(i, 1), a);
  return out;
}

double BinaryCovariateDgp::cell_probability(int w1, int w2) {
  return (w1 ? kBinaryP1 : 1.0 - kBinaryP1) * (w2 ? kBinaryP2 : 1.0 - kBinaryP2);
}

double BinaryCovariateDgp::exact_value(const TreatmentRule& rule) const {
  double total = 0.0;
  for (int w1 = 0; w1 <= 1; ++w1) {
    for (int w2 = 0; w2 <= 1; ++w2) {
      Eigen::VectorXd w(2);
      w << w1, w2;
      total += cell_probability(w1, w2) * binary_p(w1, w2, rule.evaluate(w));
    }
  }
  return total;
}

const Dgp& continuous_dgp() {
  static const ContinuousDgp instance;
  return instance;
}

DgpSample draw_dgp(std::size_t n, std::uint64_t seed, const Dgp& dgp) {
  if (n < 1) throw InvalidConfiguration("draw_dgp needs n >= 1");
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::MatrixXd w(static_cast<Index>(n), dgp.dim());
  Eigen::VectorXi a(static_cast<Index>(n));
  Eigen::VectorXd y(static_cast<Index>(n));
  for (Index i = 0; i < w.rows(); ++i) {
    w.row(i) = dgp.draw_covariate_row(rng).transpose();
    a[i] = unif(rng) < dgp.treatment_probability() ? 1 : 0;
    const double p = dgp.mean_outcome(w.row(i), a[i])[0];
    y[i] = unif(rng) < p ? 1.0 : 0.0;
  }
  return {Dataset(std::move(w), std::move(a), std::move(y)), seed};
}

namespace {

OracleValue summarize(const Eigen::VectorXd& values) {
  const double m = static_cast<double>(values.size());
  const double mean = values.mean();
  const double ss = (values.array() - mean).square().sum();
  const double sd = values.size() > 1 ? std::sqrt(ss / (m - 1.0)) : 0.0;
  return {mean, sd / std::sqrt(m)};
}

}  // namespace

OracleValue oracle_value(const TreatmentRule& rule, std::size_t m, std::uint64_t seed, const Dgp& dgp) {
  if (m < 1) throw InvalidConfiguration("oracle_value needs m >= 1");
  // Draw in chunks to bound memory at large m.
  constexpr std::size_t kChunk = 100000;
  Rng rng(seed);
  Eigen::VectorXd values(static_cast<Index>(m));
  for (std::size_t start = 0; start < m; start += kChunk) {
    const std::size_t len = std::min(kChunk, m - start);
    const Eigen::MatrixXd w = dgp.draw_covariates(len, rng);
    const Eigen::VectorXi d = rule.evaluate_rows(w);
    const Eigen::VectorXd p0 = dgp.mean_outcome(w, 0);
    const Eigen::VectorXd p1 = dgp.mean_outcome(w, 1);
    for (Index i = 0; i < w.rows(); ++i) {
      values[static_cast<Index>(start) + i] = d[i] == 1 ? p1[i] : p0[i];
    }
  }
  return summarize(values);
}

OraclePanel::OraclePanel(const Dgp& dgp, std::size_t m, std::uint64_t seed) {
  if (m < 1) throw InvalidConfiguration("oracle panel needs m >= 1");
  Rng rng(seed);
  w_ = dgp.draw_covariates(m, rng);
  p0_ = dgp.mean_outcome(w_, 0);
  p1_ = dgp.mean_outcome(w_, 1);
}

OracleValue OraclePanel::value(const TreatmentRule& rule) const { return value(rule.evaluate_rows(w_)); }

OracleValue OraclePanel::value(const Eigen::VectorXi& d) const {
  if (d.size() != w_.rows()) throw ShapeError("assignments do not match the oracle panel");
  Eigen::VectorXd values(w_.rows());
  for (Index i = 0; i < w_.rows(); ++i) values[i] = d[i] == 1 ? p1_[i] : p0_[i];
  return summarize(values);
}

}  // namespace dtrval
