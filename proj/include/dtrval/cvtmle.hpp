#pragma once

// Cross-validated TMLE of a rule's value: nuisances (and, optionally, the
// rule itself) are learned on each training split, the fluctuation and
// plug-in happen on the matching validation split, and the V fold estimates
// are averaged.

#include <optional>
#include <vector>

#include "dtrval/core.hpp"
#include "dtrval/estimators.hpp"
#include "dtrval/odtr.hpp"
#include "dtrval/superlearner.hpp"

namespace dtrval {

struct CvTmleOptions {
  NuisanceOptions nuisance;             // Q library, g mode; seed is replaced per fold
  std::vector<LearnerSpec> odtr_library;  // used by cv_tmle_estimated_rule
  OdtrOptions odtr;
  int odtr_folds = 10;
  std::uint64_t seed = 1;
};

struct FoldTraining {
  NuisanceFit nuisance;
  TreatmentRule rule;
  std::optional<OdtrFit> odtr;
};

// Seed for fold v, keyed on the original ids of its validation rows so that
// relabeling folds does not change any fold's fits.
std::uint64_t fold_seed(const Dataset& d, const FoldScheme& folds, int v, std::uint64_t master);

// Learns everything fold v needs from its training rows only.  With
// `known_rule` set the rule is used as given; otherwise it is estimated.
FoldTraining train_fold(const Dataset& d, const FoldScheme& folds, int v, const CvTmleOptions& options,
                        const std::optional<TreatmentRule>& known_rule);

struct CvTmleResult {
  double psi = 0.0;
  double psi_raw = 0.0;
  Eigen::VectorXd fold_estimates;
  Eigen::VectorXd fold_variances;  // sum_{i in v} IC_i^2 / (n_v - 1)
  Eigen::VectorXd fold_epsilons;
  std::vector<bool> fold_degenerate;
  std::vector<bool> fold_epsilon_clamped;
  std::vector<std::size_t> fold_sizes;
  double sigma2 = 0.0;    // mean of fold variances
  double variance = 0.0;  // sigma2 / n
  Interval ci;
  Interval ci_raw;
  Eigen::VectorXd ic_values;  // per observation, original row order
  std::size_t n = 0;
  int folds = 0;
  std::uint64_t fold_hash = 0;
  std::vector<int> fold_assignment;
  std::vector<TreatmentRule> fold_rules;  // estimated-rule runs only
  std::vector<json> fold_rule_summaries;
  std::vector<Provenance> fold_provenance;
  OutcomeBounds bounds;

  RuleValueEstimate as_estimate() const;
  json to_json() const;
};

CvTmleResult cv_tmle_known_rule(const Dataset& d, const TreatmentRule& rule, const FoldScheme& folds,
                                const CvTmleOptions& options);

CvTmleResult cv_tmle_estimated_rule(const Dataset& d, const FoldScheme& folds, const CvTmleOptions& options);

// Fold-wise difference r1 - r2; both must use the same fold scheme.
CvTmleResult contrast(const CvTmleResult& r1, const CvTmleResult& r2);

}  // namespace dtrval
