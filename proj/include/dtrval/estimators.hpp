#pragma once

// Estimators of the value E[Q(d(W),W)] of a fixed rule d, with Wald
// intervals from working influence curves.

#include <optional>
#include <string>

#include "dtrval/core.hpp"

namespace dtrval {

enum class EstimatorKind { gcomp, iptw, iptw_dr, tmle, cv_tmle };

std::string to_string(EstimatorKind k);
EstimatorKind estimator_from_string(const std::string& s);

// Phi^{-1}(0.975).
inline constexpr double kZ975 = 1.959963984540054;

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
  bool contains(double x) const { return lower <= x && x <= upper; }
  double width() const { return upper - lower; }
};

Interval wald_interval(double psi, double variance);

struct RuleValueEstimate {
  EstimatorKind estimator = EstimatorKind::gcomp;
  double psi = 0.0;      // scaled-outcome scale
  double psi_raw = 0.0;  // original outcome scale
  Eigen::VectorXd ic_values;  // per observation; empty for G-computation
  double variance = 0.0;      // sigma_n^2 / n
  std::optional<Interval> ci;
  std::optional<Interval> ci_raw;
  std::optional<double> epsilon;  // TMLE fluctuation
  std::size_t n = 0;
  bool degenerate = false;  // no observation followed the rule
  bool epsilon_clamped = false;
  OutcomeBounds bounds;

  json to_json() const;
};

// Per-observation ingredients shared by every estimator.
struct RuleInputs {
  Eigen::VectorXi rule;     // d(w_i)
  Eigen::VectorXi a;        // observed treatment
  Eigen::VectorXd y;        // scaled outcome
  Eigen::VectorXd g_obs;    // g(a_i | w_i)
  Eigen::VectorXd q_obs;    // Q(a_i, w_i)
  Eigen::VectorXd q_rule;   // Q(d(w_i), w_i)

  // H_i = I[a_i = d_i] / g(a_i | w_i).
  Eigen::VectorXd clever_covariate() const;
};

RuleInputs make_rule_inputs(const Dataset& d, const Eigen::VectorXi& rule, const NuisanceFit& nf);

struct TargetedValue {
  double psi = 0.0;
  double epsilon = 0.0;
  bool clamped = false;
  bool degenerate = false;
  Eigen::VectorXd ic;              // working influence curve
  Eigen::VectorXd q_star_obs;      // updated Q at observed treatment
  Eigen::VectorXd q_star_rule;     // updated Q at the rule
};

// The TMLE fluctuation and plug-in on one sample.
TargetedValue target_rule_value(const RuleInputs& in);

RuleValueEstimate gcomp(const Dataset& d, const TreatmentRule& rule, const NuisanceFit& nf);
RuleValueEstimate iptw(const Dataset& d, const TreatmentRule& rule, const NuisanceFit& nf);
RuleValueEstimate iptw_dr(const Dataset& d, const TreatmentRule& rule, const NuisanceFit& nf);
RuleValueEstimate tmle(const Dataset& d, const TreatmentRule& rule, const NuisanceFit& nf);

// Value difference e1 - e2 with the pairwise IC difference.
RuleValueEstimate contrast(const RuleValueEstimate& e1, const RuleValueEstimate& e2);

// sigma_n^2 = (1/n) sum IC_i^2.
double ic_variance(const Eigen::VectorXd& ic);

}  // namespace dtrval
