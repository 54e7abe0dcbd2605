#pragma once

#include <memory>

#include "dtrval/learners.hpp"

namespace dtrval::detail {

// Covariates restricted to spec.feature_mask, with A prepended when present.
Eigen::MatrixXd feature_matrix(const LearnerSpec& spec, const Design& x);

std::shared_ptr<FittedLearner> fit_tree_ensemble(const LearnerSpec& spec, const Design& x,
                                                 const Eigen::VectorXd& y,
                                                 const Eigen::VectorXd& weights);

// Lets the tree module reach the protected FittedLearner constructor.
class LearnerBase : public FittedLearner {
 protected:
  LearnerBase(LearnerSpec spec, Index dim, bool with_treatment)
      : FittedLearner(std::move(spec), dim, with_treatment) {}

 public:
  void set_fit_status(bool converged, int iterations) {
    converged_ = converged;
    iterations_ = iterations;
  }
};

}  // namespace dtrval::detail
