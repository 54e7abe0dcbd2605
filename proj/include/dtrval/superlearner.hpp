#pragma once

// Cross-validated ensembles (SuperLearner) for the outcome regression Q and
// the treatment mechanism g, plus the glue that turns them into a
// NuisanceFit.

#include <memory>
#include <string>
#include <vector>

#include "dtrval/core.hpp"
#include "dtrval/learners.hpp"

namespace dtrval {

enum class EnsembleMode { discrete, convex };
enum class EnsembleTarget { outcome, treatment };  // Q: Y on (A,W); g: A on W

std::string to_string(EnsembleMode mode);
EnsembleMode ensemble_mode_from_string(const std::string& s);

class EnsembleFit {
 public:
  EnsembleFit(std::vector<LearnerSpec> specs, std::vector<std::shared_ptr<const FittedLearner>> members,
              Eigen::VectorXd weights, Eigen::VectorXd cv_risks, EnsembleMode mode,
              EnsembleTarget target, Index dim);

  const std::vector<LearnerSpec>& specs() const { return specs_; }
  // Null entries are members whose fit failed (weight 0).
  const std::vector<std::shared_ptr<const FittedLearner>>& members() const { return members_; }
  const Eigen::VectorXd& weights() const { return weights_; }
  const Eigen::VectorXd& cv_risks() const { return cv_risks_; }
  EnsembleMode mode() const { return mode_; }
  EnsembleTarget target() const { return target_; }

  // sum_j alpha_j * member_j(x).
  Eigen::VectorXd predict(const Design& x) const;

  json to_json() const;

 private:
  std::vector<LearnerSpec> specs_;
  std::vector<std::shared_ptr<const FittedLearner>> members_;
  Eigen::VectorXd weights_;
  Eigen::VectorXd cv_risks_;
  EnsembleMode mode_;
  EnsembleTarget target_;
  Index dim_;
};

// Cross-validated squared-error risk per member, metalearner weights, and
// members refit on all of `d`.  For the outcome target `d` must carry a
// scaled outcome.
EnsembleFit fit_superlearner(const std::vector<LearnerSpec>& library, const Dataset& d,
                             EnsembleTarget target, const FoldScheme& folds, EnsembleMode mode);

Eigen::VectorXd predict_q(const EnsembleFit& e, int a, const Eigen::MatrixXd& w);
Eigen::VectorXd predict_g1(const EnsembleFit& e, const Eigen::MatrixXd& w);

// Euclidean projection onto the probability simplex.
Eigen::VectorXd project_to_simplex(const Eigen::VectorXd& v);

struct SimplexLsOptions {
  int max_iterations = 2000;
  double tolerance = 1e-10;
};

// argmin over the simplex of mean((y - Z alpha)^2), by projected gradient
// descent started at the best vertex.
Eigen::VectorXd simplex_least_squares(const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                                      const SimplexLsOptions& options = {});

double mean_squared_error(const Eigen::VectorXd& y, const Eigen::VectorXd& prediction);

class EnsembleOutcomeModel final : public OutcomeModel {
 public:
  explicit EnsembleOutcomeModel(EnsembleFit fit) : fit_(std::move(fit)) {}
  Eigen::VectorXd predict(int a, const Eigen::MatrixXd& w) const override { return predict_q(fit_, a, w); }
  json describe() const override { return fit_.to_json(); }
  const EnsembleFit& ensemble() const { return fit_; }

 private:
  EnsembleFit fit_;
};

class LearnerPropensityModel final : public PropensityModel {
 public:
  explicit LearnerPropensityModel(std::shared_ptr<const FittedLearner> fit) : fit_(std::move(fit)) {}
  Eigen::VectorXd predict_treated(const Eigen::MatrixXd& w) const override { return fit_->predict(Design(w)); }
  json describe() const override { return fit_->describe(); }

 private:
  std::shared_ptr<const FittedLearner> fit_;
};

struct TreatmentModelSpec {
  enum class Kind { known, fit_glm } kind = Kind::fit_glm;
  double p = 0.5;  // P(A=1) when known

  static TreatmentModelSpec known(double p) { return {Kind::known, p}; }
  static TreatmentModelSpec fitted_glm() { return {Kind::fit_glm, 0.5}; }
  json to_json() const;
};

struct NuisanceOptions {
  std::vector<LearnerSpec> q_library;
  TreatmentModelSpec g = TreatmentModelSpec::fitted_glm();
  EnsembleMode mode = EnsembleMode::convex;
  int inner_folds = 10;
  double g_min = 0.01;
  std::uint64_t seed = 1;
};

// Q by SuperLearner (inner folds min(inner_folds, n)), g either known or a
// main-terms logistic regression of A on W.
NuisanceFit fit_nuisance(const Dataset& d, const NuisanceOptions& options, Provenance provenance);

enum class LibraryConfig { least, moderate, most };
std::string to_string(LibraryConfig c);
LibraryConfig library_config_from_string(const std::string& s);

// Outcome-regression libraries of increasing data-adaptivity.
std::vector<LearnerSpec> q_library_preset(LibraryConfig config, Index covariates = 4);

}  // namespace dtrval
