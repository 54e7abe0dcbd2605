#pragma once

// Shared fixtures and hand-rolled generators for the unit tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <random>

#include "dtrval/core.hpp"
#include "dtrval/learners.hpp"
#include "dtrval/rng.hpp"

namespace testsupport {

using dtrval::Dataset;
using dtrval::Index;
using dtrval::NuisanceFit;
using dtrval::Rng;

inline double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// W ~ N(0,1)^p, A ~ Bernoulli(pa), Y ~ Bernoulli(expit(0.3 + w0 - 0.5 a + a w1)).
inline Dataset random_dataset(std::size_t n, Index p, std::uint64_t seed, double pa = 0.5) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::MatrixXd w(static_cast<Index>(n), p);
  Eigen::VectorXi a(static_cast<Index>(n));
  Eigen::VectorXd y(static_cast<Index>(n));
  for (Index i = 0; i < w.rows(); ++i) {
    for (Index j = 0; j < p; ++j) w(i, j) = normal(rng);
    a[i] = unif(rng) < pa ? 1 : 0;
    const double w1 = p > 1 ? w(i, 1) : 0.0;
    y[i] = unif(rng) < expit(0.3 + w(i, 0) - 0.5 * a[i] + a[i] * w1) ? 1.0 : 0.0;
  }
  return Dataset(std::move(w), std::move(a), std::move(y));
}

// Same design with a continuous outcome in [0,1].
inline Dataset random_dataset_fractional(std::size_t n, Index p, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::MatrixXd w(static_cast<Index>(n), p);
  Eigen::VectorXi a(static_cast<Index>(n));
  Eigen::VectorXd y(static_cast<Index>(n));
  for (Index i = 0; i < w.rows(); ++i) {
    for (Index j = 0; j < p; ++j) w(i, j) = normal(rng);
    a[i] = unif(rng) < 0.5 ? 1 : 0;
    y[i] = std::clamp(expit(w(i, 0) + 0.4 * a[i]) + 0.2 * (unif(rng) - 0.5), 0.0, 1.0);
  }
  return Dataset(std::move(w), std::move(a), std::move(y));
}

class FunctionOutcome final : public dtrval::OutcomeModel {
 public:
  using Fn = std::function<double(int, const Eigen::VectorXd&)>;
  explicit FunctionOutcome(Fn f) : f_(std::move(f)) {}
  Eigen::VectorXd predict(int a, const Eigen::MatrixXd& w) const override {
    Eigen::VectorXd out(w.rows());
    for (Index i = 0; i < w.rows(); ++i) out[i] = f_(a, w.row(i).transpose());
    return out;
  }
  dtrval::json describe() const override { return {{"kind", "function"}}; }

 private:
  Fn f_;
};

class FunctionPropensity final : public dtrval::PropensityModel {
 public:
  using Fn = std::function<double(const Eigen::VectorXd&)>;
  explicit FunctionPropensity(Fn f) : f_(std::move(f)) {}
  Eigen::VectorXd predict_treated(const Eigen::MatrixXd& w) const override {
    Eigen::VectorXd out(w.rows());
    for (Index i = 0; i < w.rows(); ++i) out[i] = f_(w.row(i).transpose());
    return out;
  }
  dtrval::json describe() const override { return {{"kind", "function"}}; }

 private:
  Fn f_;
};

inline NuisanceFit make_nuisance(double g1, FunctionOutcome::Fn q, const Dataset& d) {
  return NuisanceFit(std::make_shared<dtrval::ConstantPropensity>(g1), std::make_shared<FunctionOutcome>(std::move(q)),
                     dtrval::Provenance::whole(d));
}

inline NuisanceFit make_nuisance(FunctionPropensity::Fn g1, FunctionOutcome::Fn q, const Dataset& d) {
  return NuisanceFit(std::make_shared<FunctionPropensity>(std::move(g1)),
                     std::make_shared<FunctionOutcome>(std::move(q)), dtrval::Provenance::whole(d));
}

// A blip given by a plain function of the covariate row.
class FunctionBlip final : public dtrval::BlipFunction {
 public:
  using Fn = std::function<double(const Eigen::VectorXd&)>;
  explicit FunctionBlip(Fn f) : f_(std::move(f)) {}
  Eigen::VectorXd evaluate(const Eigen::MatrixXd& w) const override {
    Eigen::VectorXd out(w.rows());
    for (Index i = 0; i < w.rows(); ++i) out[i] = f_(w.row(i).transpose());
    return out;
  }
  dtrval::json describe() const override { return {{"kind", "function"}}; }

 private:
  Fn f_;
};

inline dtrval::TreatmentRule function_rule(FunctionBlip::Fn f) {
  return dtrval::TreatmentRule::blip_backed(std::make_shared<FunctionBlip>(std::move(f)));
}

}  // namespace testsupport
