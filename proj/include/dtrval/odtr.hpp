#pragma once

// Optimal rule estimation: candidate blip regressions on a doubly robust
// pseudo-outcome, combined with simplex weights chosen to maximise the
// cross-validated value of the implied rule.

#include <memory>
#include <string>
#include <vector>

#include "dtrval/core.hpp"
#include "dtrval/learners.hpp"
#include "dtrval/superlearner.hpp"

namespace dtrval {

struct BlipCandidate {
  LearnerSpec spec;
  std::shared_ptr<const FittedLearner> fit;  // null if the fit failed
};

// w -> sum_j alpha_j B_j(w).
class EnsembleBlip final : public BlipFunction {
 public:
  EnsembleBlip(std::vector<BlipCandidate> candidates, Eigen::VectorXd alpha, Index dim);

  Eigen::VectorXd evaluate(const Eigen::MatrixXd& w) const override;
  std::optional<Index> input_dim() const override { return dim_; }
  json describe() const override;

  const std::vector<BlipCandidate>& candidates() const { return candidates_; }
  const Eigen::VectorXd& alpha() const { return alpha_; }

 private:
  std::vector<BlipCandidate> candidates_;
  Eigen::VectorXd alpha_;
  Index dim_;
};

// Metalearner criterion: cross-validated rule value (IPTW or augmented), or
// cross-validated squared error of the blip against the pseudo-outcome.
enum class ValueRisk { iptw, dr, blip_mse };
std::string to_string(ValueRisk r);
ValueRisk value_risk_from_string(const std::string& s);

struct OdtrOptions {
  ValueRisk risk = ValueRisk::iptw;
  EnsembleMode mode = EnsembleMode::convex;
  double grid_resolution = 0.05;
  int exhaustive_max = 4;   // exhaustive grid up to this many candidates
  int random_points = 20;
  int local_steps = 10;
  std::uint64_t seed = 3;
};

struct OdtrFit {
  std::vector<BlipCandidate> candidates;
  Eigen::VectorXd alpha;
  TreatmentRule rule = TreatmentRule::treat_none();
  Eigen::VectorXd cv_values;     // per candidate, fold-out IPTW value
  double ensemble_cv_value = 0.0;
  bool degenerate = false;       // the blip is identically zero on the data
  Eigen::MatrixXd cv_blips;      // fold-out predictions, n x candidates
  std::vector<Provenance> fold_provenance;  // rows each fold's candidates saw

  json to_json() const;
};

// D_i = (2a_i - 1)/g(a_i|w_i) (y_i - Q(a_i,w_i)) + Q(1,w_i) - Q(0,w_i).
Eigen::VectorXd pseudo_outcome(const Dataset& d, const NuisanceFit& nf);

// Per-row value contributions: the value of rule d is mean_i table(i, d_i).
// IPTW: table(i, a_i) = y_i / g_i, zero otherwise.
Eigen::MatrixXd iptw_value_table(const Eigen::VectorXi& a, const Eigen::VectorXd& y, const Eigen::VectorXd& g_obs);
// Augmented: table(i, t) = Q(t, w_i) + I[a_i = t] / g_i (y_i - Q(t, w_i)).
Eigen::MatrixXd dr_value_table(const Eigen::VectorXi& a, const Eigen::VectorXd& y, const Eigen::VectorXd& g_obs,
                               const Eigen::VectorXd& q0, const Eigen::VectorXd& q1);
double table_rule_value(const Eigen::MatrixXd& table, const Eigen::VectorXi& rule);

// (1/n) sum_i I[a_i = d_i] / g_i * y_i.
double iptw_rule_value(const Eigen::VectorXi& rule, const Eigen::VectorXi& a, const Eigen::VectorXd& y,
                       const Eigen::VectorXd& g_obs);

// Fold-out value of the rule I[cv_blips * alpha > 0].
double cv_rule_value(const Eigen::MatrixXd& cv_blips, const Eigen::VectorXd& alpha, const Eigen::VectorXi& a,
                     const Eigen::VectorXd& y, const Eigen::VectorXd& g_obs);

double cv_rule_value(const Eigen::MatrixXd& cv_blips, const Eigen::VectorXd& alpha, const Eigen::MatrixXd& table);

// Maximises cv_rule_value over the simplex as described by `options`.
Eigen::VectorXd search_alpha(const Eigen::MatrixXd& cv_blips, const Eigen::MatrixXd& table, const OdtrOptions& options);
Eigen::VectorXd search_alpha(const Eigen::MatrixXd& cv_blips, const Eigen::VectorXi& a, const Eigen::VectorXd& y,
                             const Eigen::VectorXd& g_obs, const OdtrOptions& options);

OdtrFit fit_odtr(const std::vector<LearnerSpec>& library, const Dataset& d, const NuisanceFit& nf,
                 const FoldScheme& folds, const OdtrOptions& options = {});

// Blip libraries (identity link) of increasing data-adaptivity.
std::vector<LearnerSpec> odtr_library_preset(LibraryConfig config, Index covariates = 4);

// I[B_0(w) > 0] for the continuous simulation process.
TreatmentRule oracle_true_rule();

}  // namespace dtrval
