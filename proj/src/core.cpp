#include "dtrval/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dtrval/error.hpp"
#include "dtrval/rng.hpp"

namespace dtrval {

Dataset::Dataset(Eigen::MatrixXd covariates, Eigen::VectorXi treatment, Eigen::VectorXd outcome,
                 std::vector<std::string> column_names)
    : covariates_(std::move(covariates)),
      treatment_(std::move(treatment)),
      outcome_(std::move(outcome)),
      column_names_(std::move(column_names)) {
  const Index n = outcome_.size();
  if (n < 1) throw InvalidInput("dataset must contain at least one observation");
  if (covariates_.rows() != n || treatment_.size() != n) {
    throw ShapeError("dataset columns disagree on the number of observations");
  }
  for (Index i = 0; i < n; ++i) {
    if (treatment_[i] != 0 && treatment_[i] != 1) {
      throw InvalidInput("treatment must be 0 or 1 (row " + std::to_string(i) + ")");
    }
  }
  if (column_names_.empty()) {
    for (Index j = 0; j < covariates_.cols(); ++j) column_names_.push_back("W" + std::to_string(j + 1));
  } else if (static_cast<Index>(column_names_.size()) != covariates_.cols()) {
    throw ShapeError("column_names does not match covariate dimension");
  }
  treatment_real_ = treatment_.cast<double>();
  row_ids_.resize(static_cast<std::size_t>(n));
  std::iota(row_ids_.begin(), row_ids_.end(), std::size_t{0});
}

Dataset Dataset::from_observations(std::span<const Observation> observations,
                                   std::vector<std::string> column_names) {
  if (observations.empty()) throw InvalidInput("dataset must contain at least one observation");
  const Index n = static_cast<Index>(observations.size());
  const Index p = observations.front().w.size();
  Eigen::MatrixXd w(n, p);
  Eigen::VectorXi a(n);
  Eigen::VectorXd y(n);
  for (Index i = 0; i < n; ++i) {
    const auto& o = observations[static_cast<std::size_t>(i)];
    if (o.w.size() != p) throw ShapeError("observations disagree on covariate dimension");
    w.row(i) = o.w.transpose();
    a[i] = o.a;
    y[i] = o.y;
  }
  return Dataset(std::move(w), std::move(a), std::move(y), std::move(column_names));
}

Observation Dataset::observation(std::size_t i) const {
  const auto r = static_cast<Index>(i);
  return Observation{covariates_.row(r).transpose(), treatment_[r], outcome_[r]};
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  if (rows.empty()) throw InvalidInput("subset must select at least one row");
  Dataset out = *this;
  const Index m = static_cast<Index>(rows.size());
  out.covariates_.resize(m, covariates_.cols());
  out.treatment_.resize(m);
  out.outcome_.resize(m);
  out.row_ids_.resize(rows.size());
  for (Index i = 0; i < m; ++i) {
    const auto src = rows[static_cast<std::size_t>(i)];
    if (src >= n()) throw ShapeError("subset row index out of range");
    const auto s = static_cast<Index>(src);
    out.covariates_.row(i) = covariates_.row(s);
    out.treatment_[i] = treatment_[s];
    out.outcome_[i] = outcome_[s];
    out.row_ids_[static_cast<std::size_t>(i)] = row_ids_[src];
  }
  out.treatment_real_ = out.treatment_.cast<double>();
  return out;
}

Dataset Dataset::with_outcome(Eigen::VectorXd outcome) const {
  if (outcome.size() != outcome_.size()) throw ShapeError("replacement outcome has wrong length");
  Dataset out = *this;
  out.outcome_ = std::move(outcome);
  return out;
}

Dataset Dataset::with_rows_permuted(std::span<const std::size_t> order) const {
  if (order.size() != n()) throw ShapeError("permutation has wrong length");
  return subset(order);
}

Dataset scale_outcome(const Dataset& d) {
  if (d.scaled_) return d;
  const Eigen::VectorXd& y = d.outcome_;
  const double lo = y.minCoeff();
  const double hi = y.maxCoeff();
  const bool binary = (y.array() == 0.0 || y.array() == 1.0).all();

  OutcomeBounds bounds;
  if (binary) {
    bounds = {0.0, 1.0};
  } else if (hi > lo) {
    bounds = {lo, hi};
  } else {
    bounds = {lo, lo + 1.0};
  }
  Dataset out = d;
  out.outcome_ = ((y.array() - bounds.lower) / bounds.width()).matrix();
  out.bounds_ = bounds;
  out.scaled_ = true;
  return out;
}

Dataset unscale_outcome(const Dataset& d) {
  if (!d.scaled_) return d;
  Dataset out = d;
  out.outcome_ = (d.outcome_.array() * d.bounds_.width() + d.bounds_.lower).matrix();
  out.bounds_ = OutcomeBounds{};
  out.scaled_ = false;
  return out;
}

// ---------------------------------------------------------------------------

FoldScheme::FoldScheme(int folds, std::vector<int> assignment, std::uint64_t seed)
    : folds_(folds), assignment_(std::move(assignment)), seed_(seed) {
  if (folds_ < 1) throw InvalidConfiguration("fold count must be positive");
  for (int f : assignment_) {
    if (f < 0 || f >= folds_) throw InvalidConfiguration("fold index out of range");
  }
}

std::vector<std::size_t> FoldScheme::validation_rows(int v) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < assignment_.size(); ++i) {
    if (assignment_[i] == v) rows.push_back(i);
  }
  return rows;
}

std::vector<std::size_t> FoldScheme::training_rows(int v) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < assignment_.size(); ++i) {
    if (assignment_[i] != v) rows.push_back(i);
  }
  return rows;
}

std::vector<std::size_t> FoldScheme::fold_sizes() const {
  std::vector<std::size_t> sizes(static_cast<std::size_t>(folds_), 0);
  for (int f : assignment_) ++sizes[static_cast<std::size_t>(f)];
  return sizes;
}

std::uint64_t FoldScheme::hash() const {
  std::uint64_t h = mix64(static_cast<std::uint64_t>(folds_));
  for (int f : assignment_) h = mix64(h ^ static_cast<std::uint64_t>(f + 1));
  return h;
}

FoldScheme FoldScheme::relabeled(std::span<const int> permutation) const {
  if (static_cast<int>(permutation.size()) != folds_) {
    throw InvalidConfiguration("fold permutation has wrong length");
  }
  std::vector<int> out(assignment_.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = permutation[static_cast<std::size_t>(assignment_[i])];
  }
  return FoldScheme(folds_, std::move(out), seed_);
}

FoldScheme make_folds(std::size_t n, int v, std::uint64_t seed) {
  if (v < 2) throw InvalidConfiguration("need at least 2 folds, got " + std::to_string(v));
  if (static_cast<std::size_t>(v) > n) {
    throw InvalidConfiguration("cannot split " + std::to_string(n) + " observations into " +
                               std::to_string(v) + " folds");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> assignment(n);
  for (std::size_t pos = 0; pos < n; ++pos) {
    assignment[order[pos]] = static_cast<int>(pos % static_cast<std::size_t>(v));
  }
  return FoldScheme(v, std::move(assignment), seed);
}

// ---------------------------------------------------------------------------

TreatmentRule TreatmentRule::static_rule(int a0) {
  if (a0 != 0 && a0 != 1) throw InvalidConfiguration("static rule treatment must be 0 or 1");
  TreatmentRule r;
  r.kind_ = Kind::static_assignment;
  r.static_a_ = a0;
  return r;
}

TreatmentRule TreatmentRule::threshold(Index column, double cutoff, bool treat_above) {
  if (column < 0) throw InvalidConfiguration("threshold column must be non-negative");
  TreatmentRule r;
  r.kind_ = Kind::covariate_threshold;
  r.column_ = column;
  r.cutoff_ = cutoff;
  r.treat_above_ = treat_above;
  return r;
}

TreatmentRule TreatmentRule::blip_backed(std::shared_ptr<const BlipFunction> blip) {
  if (!blip) throw InvalidConfiguration("blip-backed rule needs a blip function");
  TreatmentRule r;
  r.kind_ = Kind::blip_backed;
  r.blip_ = std::move(blip);
  return r;
}

TreatmentRule TreatmentRule::with_covariate_subset(std::vector<Index> columns) const {
  for (Index c : columns) {
    if (c < 0) throw InvalidConfiguration("covariate subset index must be non-negative");
  }
  TreatmentRule r = *this;
  r.subset_ = std::move(columns);
  return r;
}

Eigen::MatrixXd TreatmentRule::select_inputs(const Eigen::MatrixXd& w) const {
  Eigen::MatrixXd v;
  if (subset_.empty()) {
    v = w;
  } else {
    v.resize(w.rows(), static_cast<Index>(subset_.size()));
    for (std::size_t j = 0; j < subset_.size(); ++j) {
      if (subset_[j] >= w.cols()) throw ShapeError("rule covariate subset exceeds covariate dimension");
      v.col(static_cast<Index>(j)) = w.col(subset_[j]);
    }
  }
  if (kind_ == Kind::covariate_threshold && column_ >= v.cols()) {
    throw ShapeError("threshold rule column " + std::to_string(column_) +
                     " exceeds rule input dimension " + std::to_string(v.cols()));
  }
  if (kind_ == Kind::blip_backed) {
    if (auto dim = blip_->input_dim(); dim && *dim != v.cols()) {
      throw ShapeError("blip expects " + std::to_string(*dim) + " covariates, got " +
                       std::to_string(v.cols()));
    }
  }
  return v;
}

Eigen::VectorXi TreatmentRule::evaluate_rows(const Eigen::MatrixXd& w) const {
  if (kind_ == Kind::static_assignment) {
    if (!subset_.empty()) select_inputs(w);
    return Eigen::VectorXi::Constant(w.rows(), static_a_);
  }
  const Eigen::MatrixXd v = select_inputs(w);
  Eigen::VectorXi out(v.rows());
  if (kind_ == Kind::covariate_threshold) {
    for (Index i = 0; i < v.rows(); ++i) {
      const bool above = v(i, column_) > cutoff_;
      out[i] = (above == treat_above_) ? 1 : 0;
    }
    return out;
  }
  const Eigen::VectorXd b = blip_->evaluate(v);
  for (Index i = 0; i < v.rows(); ++i) out[i] = b[i] > 0.0 ? 1 : 0;
  return out;
}

int TreatmentRule::evaluate(const Eigen::VectorXd& w) const {
  return evaluate_rows(w.transpose())[0];
}

Eigen::VectorXd TreatmentRule::blip(const Eigen::MatrixXd& w) const {
  if (kind_ != Kind::blip_backed) throw InvalidConfiguration("rule is not blip-backed");
  return blip_->evaluate(select_inputs(w));
}

json TreatmentRule::to_json() const {
  json j;
  switch (kind_) {
    case Kind::static_assignment:
      j = {{"kind", "static"}, {"treatment", static_a_}};
      break;
    case Kind::covariate_threshold:
      j = {{"kind", "threshold"}, {"column", column_}, {"cutoff", cutoff_}, {"treat_above", treat_above_}};
      break;
    case Kind::blip_backed:
      j = {{"kind", "blip"}, {"blip", blip_->describe()}};
      break;
  }
  if (!subset_.empty()) j["covariate_subset"] = subset_;
  return j;
}

Eigen::VectorXi apply_rule(const TreatmentRule& rule, const Dataset& d) {
  return rule.evaluate_rows(d.covariates());
}

// ---------------------------------------------------------------------------

Provenance Provenance::whole(const Dataset& d) {
  return Provenance{true, -1, d.row_ids()};
}

Provenance Provenance::training_fold(const Dataset& training, int fold) {
  return Provenance{false, fold, training.row_ids()};
}

json Provenance::to_json() const {
  json j{{"whole_sample", whole_sample}, {"training_size", training_rows.size()}};
  if (!whole_sample) j["held_out_fold"] = fold;
  return j;
}

NuisanceFit::NuisanceFit(std::shared_ptr<const PropensityModel> propensity,
                         std::shared_ptr<const OutcomeModel> outcome, Provenance provenance,
                         double g_min)
    : propensity_(std::move(propensity)),
      outcome_(std::move(outcome)),
      provenance_(std::move(provenance)),
      g_min_(g_min) {
  if (!propensity_ || !outcome_) throw InvalidConfiguration("nuisance fit needs both g and Q");
  if (!(g_min_ > 0.0 && g_min_ < 0.5)) throw InvalidConfiguration("g_min must lie in (0, 0.5)");
}

Eigen::VectorXd NuisanceFit::g1(const Eigen::MatrixXd& w) const {
  return propensity_->predict_treated(w).cwiseMax(g_min_).cwiseMin(1.0 - g_min_);
}

Eigen::VectorXd NuisanceFit::g(const Eigen::VectorXi& a, const Eigen::MatrixXd& w) const {
  if (a.size() != w.rows()) throw ShapeError("treatment vector and covariates disagree in length");
  Eigen::VectorXd p = g1(w);
  for (Index i = 0; i < p.size(); ++i) {
    if (a[i] == 0) p[i] = 1.0 - p[i];
  }
  return p;
}

Eigen::VectorXd NuisanceFit::q(int a, const Eigen::MatrixXd& w) const {
  return outcome_->predict(a, w).cwiseMax(0.0).cwiseMin(1.0);
}

Eigen::VectorXd NuisanceFit::q(const Eigen::VectorXi& a, const Eigen::MatrixXd& w) const {
  if (a.size() != w.rows()) throw ShapeError("treatment vector and covariates disagree in length");
  const Eigen::VectorXd q0 = q(0, w);
  const Eigen::VectorXd q1 = q(1, w);
  Eigen::VectorXd out(a.size());
  for (Index i = 0; i < a.size(); ++i) out[i] = a[i] == 1 ? q1[i] : q0[i];
  return out;
}

}  // namespace dtrval
