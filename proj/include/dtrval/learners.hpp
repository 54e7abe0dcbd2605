#pragma once

// Regression learners with a uniform weighted fit / predict contract.
//
// Every learner receives a Design: the covariate matrix W and, when it is
// modelling an outcome regression Q(A,W), the treatment column A.  With a
// logit link the outcome must lie in [0,1] and predictions stay in [0,1];
// with the identity link (used for blip regressions) the outcome is any
// real number.

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "dtrval/core.hpp"

namespace dtrval {

enum class LearnerFamily {
  mean,
  glm_main_terms,
  glm_univariate,  // intercept + W_j (+ A and W_j*A when A is present)
  glm_pairwise,    // main terms + all pairwise products
  knn,
  tree_ensemble,   // bagged shallow regression trees
};

enum class Link { logit, identity };

struct LearnerSpec {
  LearnerFamily family = LearnerFamily::mean;
  Link link = Link::logit;
  Index column = 0;     // glm_univariate
  double k = 5;         // knn neighbourhood, in units of observation weight
  int depth = 3;        // tree_ensemble
  double min_leaf = 20;  // tree_ensemble, weight mass per leaf
  int trees = 30;       // tree_ensemble
  std::uint64_t seed = 17;
  std::vector<Index> feature_mask;  // covariate columns used; empty = all

  static LearnerSpec mean(Link link = Link::logit);
  static LearnerSpec glm(Link link = Link::logit);
  static LearnerSpec univariate(Index column, Link link = Link::logit);
  static LearnerSpec pairwise(Link link = Link::logit);
  static LearnerSpec nearest_neighbours(double k, Link link = Link::logit);
  static LearnerSpec tree_ensemble(int depth, double min_leaf, int trees = 30,
                                   Link link = Link::logit);

  // Short text tag, e.g. "glm_univariate:2", "knn:5", "trees:3:20:30".
  std::string tag() const;
  // Inverse of tag(); throws InvalidConfiguration naming the unknown tag.
  static LearnerSpec parse(std::string_view tag, Link link);
};

struct Design {
  const Eigen::MatrixXd* covariates = nullptr;
  const Eigen::VectorXd* treatment = nullptr;  // null when A is not a feature

  Design(const Eigen::MatrixXd& w) : covariates(&w) {}  // NOLINT(google-explicit-constructor)
  Design(const Eigen::MatrixXd& w, const Eigen::VectorXd& a) : covariates(&w), treatment(&a) {}

  Index rows() const { return covariates->rows(); }
  bool has_treatment() const { return treatment != nullptr; }
};

class FittedLearner {
 public:
  virtual ~FittedLearner() = default;

  const LearnerSpec& spec() const { return spec_; }
  bool converged() const { return converged_; }
  int iterations() const { return iterations_; }

  Eigen::VectorXd predict(const Design& x) const;
  virtual json describe() const;

 protected:
  FittedLearner(LearnerSpec spec, Index dim, bool with_treatment)
      : spec_(std::move(spec)), dim_(dim), with_treatment_(with_treatment) {}

  virtual Eigen::VectorXd predict_impl(const Eigen::MatrixXd& w, const Eigen::VectorXd* a) const = 0;

  LearnerSpec spec_;
  Index dim_;
  bool with_treatment_;
  bool converged_ = true;
  int iterations_ = 0;
};

// Fits `spec` by weighted likelihood (logit link) or weighted least squares
// (identity link).  Rows with zero weight are dropped before fitting, so an
// indicator weight vector is the same as fitting the selected rows.
std::shared_ptr<const FittedLearner> fit(const LearnerSpec& spec, const Design& x,
                                         const Eigen::VectorXd& y, const Eigen::VectorXd& weights);

inline Eigen::VectorXd predict(const FittedLearner& f, const Design& x) { return f.predict(x); }

// Column-wise GLM basis (with intercept) for the given family.
Eigen::MatrixXd glm_basis(const LearnerSpec& spec, const Design& x);

struct IrlsOptions {
  double tolerance = 1e-8;
  int max_iterations = 100;
  double coefficient_cap = 30.0;
};

struct IrlsResult {
  Eigen::VectorXd coefficients;
  bool converged = false;
  int iterations = 0;
  std::vector<double> log_likelihood;  // one entry per accepted iterate
};

// Weighted Bernoulli log likelihood maximized by iteratively reweighted
// least squares with step halving.  y may be fractional in [0,1].
IrlsResult fit_logistic_irls(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                             const Eigen::VectorXd& weights, const IrlsOptions& options = {});

double weighted_log_likelihood(const Eigen::MatrixXd& x, const Eigen::VectorXd& beta,
                               const Eigen::VectorXd& y, const Eigen::VectorXd& weights);

inline constexpr double kPredictionFloor = 1e-6;
inline constexpr double kEpsilonMax = 10.0;

double logistic(double x);
double logit(double p);
// logit of p after truncation to [kPredictionFloor, 1 - kPredictionFloor].
double bounded_logit(double p);

struct FluctuationResult {
  double epsilon = 0.0;
  bool clamped = false;
  int iterations = 0;
};

// One-parameter weighted logistic regression of y on an intercept with
// fixed offsets: solves sum_i w_i (y_i - expit(offset_i + eps)) = 0.
FluctuationResult fluctuation_fit(const Eigen::VectorXd& offset_logits, const Eigen::VectorXd& y,
                                  const Eigen::VectorXd& weights);

}  // namespace dtrval
