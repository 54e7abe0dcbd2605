#pragma once

// Simulation data-generating processes and Monte Carlo truths.

#include <cstdint>
#include <memory>
#include <string>

#include "dtrval/core.hpp"
#include "dtrval/rng.hpp"

namespace dtrval {

// E[Y | A=a, W=w] for the four-covariate simulation process.
double outcome_probability(const Eigen::VectorXd& w, int a);
Eigen::VectorXd outcome_probability(const Eigen::MatrixXd& w, int a);
// p(w,1) - p(w,0).
Eigen::VectorXd true_blip(const Eigen::MatrixXd& w);

class Dgp {
 public:
  virtual ~Dgp() = default;
  virtual std::string name() const = 0;
  virtual Index dim() const = 0;
  // Draws one covariate row per call, in order, from `rng`.
  virtual Eigen::VectorXd draw_covariate_row(Rng& rng) const = 0;
  virtual Eigen::VectorXd mean_outcome(const Eigen::MatrixXd& w, int a) const = 0;
  virtual double treatment_probability() const { return 0.5; }

  Eigen::MatrixXd draw_covariates(std::size_t m, Rng& rng) const;
};

// W ~ N(0, I_4), A ~ Bernoulli(0.5), Y ~ Bernoulli(p(W, A)).
class ContinuousDgp final : public Dgp {
 public:
  std::string name() const override { return "continuous"; }
  Index dim() const override { return 4; }
  Eigen::VectorXd draw_covariate_row(Rng& rng) const override;
  Eigen::VectorXd mean_outcome(const Eigen::MatrixXd& w, int a) const override {
    return outcome_probability(w, a);
  }
};

// Two independent binary covariates with P(W1=1) = 0.4, P(W2=1) = 0.7, so
// the value of any rule is a finite sum over four cells.
class BinaryCovariateDgp final : public Dgp {
 public:
  std::string name() const override { return "binary"; }
  Index dim() const override { return 2; }
  Eigen::VectorXd draw_covariate_row(Rng& rng) const override;
  Eigen::VectorXd mean_outcome(const Eigen::MatrixXd& w, int a) const override;

  static double cell_probability(int w1, int w2);
  // sum over cells of P(w) * p(w, d(w)).
  double exact_value(const TreatmentRule& rule) const;
};

const Dgp& continuous_dgp();

struct DgpSample {
  Dataset dataset;
  std::uint64_t seed = 0;
};

DgpSample draw_dgp(std::size_t n, std::uint64_t seed, const Dgp& dgp = continuous_dgp());

struct OracleValue {
  double value = 0.0;
  double std_error = 0.0;
};

// (1/m) sum_j p(w_j, d(w_j)) over fresh covariate draws.
OracleValue oracle_value(const TreatmentRule& rule, std::size_t m, std::uint64_t seed,
                         const Dgp& dgp = continuous_dgp());

// A fixed set of covariate draws with p(w,0) and p(w,1) cached, for
// evaluating many rules against the same Monte Carlo sample.
class OraclePanel {
 public:
  OraclePanel(const Dgp& dgp, std::size_t m, std::uint64_t seed);

  OracleValue value(const TreatmentRule& rule) const;
  OracleValue value(const Eigen::VectorXi& assignments) const;
  const Eigen::MatrixXd& covariates() const { return w_; }
  std::size_t size() const { return static_cast<std::size_t>(w_.rows()); }

 private:
  Eigen::MatrixXd w_;
  Eigen::VectorXd p0_;
  Eigen::VectorXd p1_;
};

// The closed-form blip of the continuous process.
class TrueBlip final : public BlipFunction {
 public:
  Eigen::VectorXd evaluate(const Eigen::MatrixXd& w) const override { return true_blip(w); }
  std::optional<Index> input_dim() const override { return 4; }
  json describe() const override { return {{"kind", "true_blip"}}; }
};

}  // namespace dtrval
