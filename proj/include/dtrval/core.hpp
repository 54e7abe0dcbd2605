#pragma once

// Shared domain types: observations, datasets, V-fold schemes, treatment
// rules and nuisance-parameter fits.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace dtrval {

using json = nlohmann::json;
using Index = Eigen::Index;

struct Observation {
  Eigen::VectorXd w;
  int a = 0;
  double y = 0.0;
};

// Affine map between the raw outcome scale and [0,1].
struct OutcomeBounds {
  double lower = 0.0;
  double upper = 1.0;

  double width() const { return upper - lower; }
  double scale(double y) const { return (y - lower) / width(); }
  double unscale(double y) const { return y * width() + lower; }
  bool is_identity() const { return lower == 0.0 && upper == 1.0; }
};

// Column-major storage of n observations (W, A, Y).  Immutable once built;
// subsets keep the original row ids so fits can report what they saw.
class Dataset {
 public:
  Dataset() = default;
  Dataset(Eigen::MatrixXd covariates, Eigen::VectorXi treatment, Eigen::VectorXd outcome,
          std::vector<std::string> column_names = {});

  static Dataset from_observations(std::span<const Observation> observations,
                                   std::vector<std::string> column_names = {});

  std::size_t n() const { return static_cast<std::size_t>(outcome_.size()); }
  Index dim() const { return covariates_.cols(); }

  const Eigen::MatrixXd& covariates() const { return covariates_; }
  const Eigen::VectorXi& treatment() const { return treatment_; }
  // A as doubles, for use as a model feature.
  const Eigen::VectorXd& treatment_real() const { return treatment_real_; }
  const Eigen::VectorXd& outcome() const { return outcome_; }
  const std::vector<std::string>& column_names() const { return column_names_; }
  const std::vector<std::size_t>& row_ids() const { return row_ids_; }

  const OutcomeBounds& bounds() const { return bounds_; }
  bool outcome_scaled() const { return scaled_; }

  Observation observation(std::size_t i) const;

  Dataset subset(std::span<const std::size_t> rows) const;
  Dataset with_outcome(Eigen::VectorXd outcome) const;
  Dataset with_rows_permuted(std::span<const std::size_t> order) const;

 private:
  friend Dataset scale_outcome(const Dataset& d);
  friend Dataset unscale_outcome(const Dataset& d);

  Eigen::MatrixXd covariates_;
  Eigen::VectorXi treatment_;
  Eigen::VectorXd treatment_real_;
  Eigen::VectorXd outcome_;
  std::vector<std::string> column_names_;
  std::vector<std::size_t> row_ids_;
  OutcomeBounds bounds_;
  bool scaled_ = false;
};

// Maps Y to [0,1] using the sample range.  Binary outcomes are left alone
// with bounds (0,1); a constant outcome y gets bounds (y, y+1).
Dataset scale_outcome(const Dataset& d);
Dataset unscale_outcome(const Dataset& d);

// CSV with a header row, covariate columns, and columns named "A" and "Y".
Dataset read_csv(const std::filesystem::path& path);
Dataset parse_csv(std::istream& in);
void write_csv(std::ostream& out, const Dataset& d);

class FoldScheme {
 public:
  FoldScheme(int folds, std::vector<int> assignment, std::uint64_t seed);

  int folds() const { return folds_; }
  std::size_t n() const { return assignment_.size(); }
  int fold_of(std::size_t i) const { return assignment_[i]; }
  const std::vector<int>& assignment() const { return assignment_; }
  std::uint64_t seed() const { return seed_; }

  std::vector<std::size_t> validation_rows(int v) const;
  std::vector<std::size_t> training_rows(int v) const;
  std::vector<std::size_t> fold_sizes() const;

  // Stable fingerprint of the assignment (not of the seed).
  std::uint64_t hash() const;

  // Fold `v` becomes fold `permutation[v]`.
  FoldScheme relabeled(std::span<const int> permutation) const;

 private:
  int folds_;
  std::vector<int> assignment_;  // 0-based fold index per observation
  std::uint64_t seed_;
};

// Shuffles 0..n-1 with the seeded RNG and deals indices round-robin.
FoldScheme make_folds(std::size_t n, int v, std::uint64_t seed);

// A conditional treatment effect predictor w -> B(w).
class BlipFunction {
 public:
  virtual ~BlipFunction() = default;
  virtual Eigen::VectorXd evaluate(const Eigen::MatrixXd& w) const = 0;
  // Required covariate dimension, when the function has one.
  virtual std::optional<Index> input_dim() const { return std::nullopt; }
  virtual json describe() const = 0;
};

class TreatmentRule {
 public:
  enum class Kind { static_assignment, covariate_threshold, blip_backed };

  static TreatmentRule static_rule(int a0);
  static TreatmentRule treat_all() { return static_rule(1); }
  static TreatmentRule treat_none() { return static_rule(0); }
  // Treat when w[column] > cutoff (or <= cutoff when treat_above is false).
  static TreatmentRule threshold(Index column, double cutoff, bool treat_above = true);
  // Treat exactly when blip(w) > 0; ties go to control.
  static TreatmentRule blip_backed(std::shared_ptr<const BlipFunction> blip);

  // Restricts the rule's input V to a subset of the covariate columns.
  TreatmentRule with_covariate_subset(std::vector<Index> columns) const;

  Kind kind() const { return kind_; }
  int static_treatment() const { return static_a_; }
  const std::shared_ptr<const BlipFunction>& blip_function() const { return blip_; }
  const std::vector<Index>& covariate_subset() const { return subset_; }

  int evaluate(const Eigen::VectorXd& w) const;
  Eigen::VectorXi evaluate_rows(const Eigen::MatrixXd& w) const;
  // Blip values on rows (blip-backed rules only).
  Eigen::VectorXd blip(const Eigen::MatrixXd& w) const;

  json to_json() const;

 private:
  TreatmentRule() = default;
  Eigen::MatrixXd select_inputs(const Eigen::MatrixXd& w) const;

  Kind kind_ = Kind::static_assignment;
  int static_a_ = 0;
  Index column_ = 0;
  double cutoff_ = 0.0;
  bool treat_above_ = true;
  std::shared_ptr<const BlipFunction> blip_;
  std::vector<Index> subset_;  // empty = all covariates
};

Eigen::VectorXi apply_rule(const TreatmentRule& rule, const Dataset& d);

// P(A=1 | W=w) before truncation.
class PropensityModel {
 public:
  virtual ~PropensityModel() = default;
  virtual Eigen::VectorXd predict_treated(const Eigen::MatrixXd& w) const = 0;
  virtual json describe() const = 0;
};

// E[Y | A=a, W=w] on the scaled-outcome scale.
class OutcomeModel {
 public:
  virtual ~OutcomeModel() = default;
  virtual Eigen::VectorXd predict(int a, const Eigen::MatrixXd& w) const = 0;
  virtual json describe() const = 0;
};

class ConstantPropensity final : public PropensityModel {
 public:
  explicit ConstantPropensity(double p) : p_(p) {}
  Eigen::VectorXd predict_treated(const Eigen::MatrixXd& w) const override {
    return Eigen::VectorXd::Constant(w.rows(), p_);
  }
  json describe() const override { return {{"kind", "known"}, {"p", p_}}; }

 private:
  double p_;
};

class ConstantOutcome final : public OutcomeModel {
 public:
  explicit ConstantOutcome(double c) : c_(c) {}
  Eigen::VectorXd predict(int, const Eigen::MatrixXd& w) const override {
    return Eigen::VectorXd::Constant(w.rows(), c_);
  }
  json describe() const override { return {{"kind", "constant"}, {"value", c_}}; }

 private:
  double c_;
};

// Which observations a fit was trained on.
struct Provenance {
  bool whole_sample = true;
  int fold = -1;                          // validation fold held out, if any
  std::vector<std::size_t> training_rows;  // original row ids

  static Provenance whole(const Dataset& d);
  static Provenance training_fold(const Dataset& training, int fold);
  json to_json() const;
};

class NuisanceFit {
 public:
  NuisanceFit(std::shared_ptr<const PropensityModel> propensity,
              std::shared_ptr<const OutcomeModel> outcome, Provenance provenance,
              double g_min = 0.01);

  // P(A=1|W) truncated to [g_min, 1-g_min].
  Eigen::VectorXd g1(const Eigen::MatrixXd& w) const;
  // g(a_i | w_i) for the given treatment values.
  Eigen::VectorXd g(const Eigen::VectorXi& a, const Eigen::MatrixXd& w) const;
  // Q(a, w) clipped to [0,1].
  Eigen::VectorXd q(int a, const Eigen::MatrixXd& w) const;
  Eigen::VectorXd q(const Eigen::VectorXi& a, const Eigen::MatrixXd& w) const;

  const Provenance& provenance() const { return provenance_; }
  double g_min() const { return g_min_; }
  const PropensityModel& propensity() const { return *propensity_; }
  const OutcomeModel& outcome() const { return *outcome_; }

 private:
  std::shared_ptr<const PropensityModel> propensity_;
  std::shared_ptr<const OutcomeModel> outcome_;
  Provenance provenance_;
  double g_min_;
};

}  // namespace dtrval
