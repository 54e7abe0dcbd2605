#include "dtrval/cvtmle.hpp"

#include <cmath>

#include "dtrval/error.hpp"
#include "dtrval/rng.hpp"

namespace dtrval {

std::uint64_t fold_seed(const Dataset& d, const FoldScheme& folds, int v, std::uint64_t master) {
  std::uint64_t h = derive_seed(master, "cv-tmle-fold");
  for (std::size_t i : folds.validation_rows(v)) h = mix64(h ^ static_cast<std::uint64_t>(d.row_ids()[i]));
  return h;
}

FoldTraining train_fold(const Dataset& d, const FoldScheme& folds, int v, const CvTmleOptions& options,
                        const std::optional<TreatmentRule>& known_rule) {
  const Dataset train = d.subset(folds.training_rows(v));
  const std::uint64_t seed = fold_seed(d, folds, v, options.seed);
  NuisanceOptions nopts = options.nuisance;
  nopts.seed = derive_seed(seed, "nuisance");
  NuisanceFit nf = fit_nuisance(train, nopts, Provenance::training_fold(train, v));
  if (known_rule) return FoldTraining{std::move(nf), *known_rule, std::nullopt};

  if (options.odtr_library.empty()) throw InvalidConfiguration("estimated-rule CV-TMLE needs an ODTR library");
  const int inner = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(options.odtr_folds), train.n()));
  const FoldScheme inner_folds = make_folds(train.n(), inner, derive_seed(seed, "odtr-folds"));
  OdtrOptions oopts = options.odtr;
  oopts.seed = derive_seed(seed, "odtr-search");
  OdtrFit fit = fit_odtr(options.odtr_library, train, nf, inner_folds, oopts);
  TreatmentRule rule = fit.rule;
  return FoldTraining{std::move(nf), std::move(rule), std::move(fit)};
}

namespace {

void check_folds(const Dataset& d, const FoldScheme& folds) {
  if (folds.n() != d.n()) throw ShapeError("fold scheme size differs from dataset size");
  for (std::size_t s : folds.fold_sizes()) {
    if (s < 2) throw DataError("every CV-TMLE validation fold needs at least two observations");
  }
}

void finalize(CvTmleResult& r) {
  r.psi = r.fold_estimates.mean();
  r.sigma2 = r.fold_variances.mean();
  r.variance = r.sigma2 / static_cast<double>(r.n);
  r.ci = wald_interval(r.psi, r.variance);
}

CvTmleResult run(const Dataset& d, const FoldScheme& folds, const CvTmleOptions& options,
                 const std::optional<TreatmentRule>& known_rule) {
  check_folds(d, folds);
  const int V = folds.folds();
  CvTmleResult r;
  r.n = d.n();
  r.folds = V;
  r.fold_hash = folds.hash();
  r.fold_assignment = folds.assignment();
  r.bounds = d.bounds();
  r.fold_estimates.resize(V);
  r.fold_variances.resize(V);
  r.fold_epsilons.resize(V);
  r.ic_values = Eigen::VectorXd::Zero(static_cast<Index>(d.n()));

  for (int v = 0; v < V; ++v) {
    FoldTraining t = train_fold(d, folds, v, options, known_rule);
    const auto rows = folds.validation_rows(v);
    const Dataset valid = d.subset(rows);
    const RuleInputs in = make_rule_inputs(valid, apply_rule(t.rule, valid), t.nuisance);
    const TargetedValue tv = target_rule_value(in);

    const double nv = static_cast<double>(rows.size());
    r.fold_estimates[v] = tv.psi;
    r.fold_variances[v] = tv.ic.squaredNorm() / (nv - 1.0);
    r.fold_epsilons[v] = tv.epsilon;
    r.fold_degenerate.push_back(tv.degenerate);
    r.fold_epsilon_clamped.push_back(tv.clamped);
    r.fold_sizes.push_back(rows.size());
    r.fold_provenance.push_back(t.nuisance.provenance());
    for (std::size_t i = 0; i < rows.size(); ++i) r.ic_values[static_cast<Index>(rows[i])] = tv.ic[static_cast<Index>(i)];
    if (!known_rule) {
      r.fold_rule_summaries.push_back(t.odtr->to_json());
      r.fold_rules.push_back(std::move(t.rule));
    }
  }
  finalize(r);
  r.psi_raw = r.bounds.unscale(r.psi);
  r.ci_raw = {r.bounds.unscale(r.ci.lower), r.bounds.unscale(r.ci.upper)};
  return r;
}

}  // namespace

CvTmleResult cv_tmle_known_rule(const Dataset& d, const TreatmentRule& rule, const FoldScheme& folds,
                                const CvTmleOptions& options) {
  return run(d, folds, options, rule);
}

CvTmleResult cv_tmle_estimated_rule(const Dataset& d, const FoldScheme& folds, const CvTmleOptions& options) {
  return run(d, folds, options, std::nullopt);
}

CvTmleResult contrast(const CvTmleResult& r1, const CvTmleResult& r2) {
  if (r1.fold_hash != r2.fold_hash || r1.n != r2.n || r1.folds != r2.folds) {
    throw AlignmentError("CV-TMLE contrast needs both results on the same fold scheme");
  }
  if (r1.bounds.lower != r2.bounds.lower || r1.bounds.upper != r2.bounds.upper) {
    throw AlignmentError("contrast of estimates on different outcome scales");
  }
  CvTmleResult out;
  out.n = r1.n;
  out.folds = r1.folds;
  out.fold_hash = r1.fold_hash;
  out.bounds = r1.bounds;
  out.fold_sizes = r1.fold_sizes;
  out.fold_estimates = r1.fold_estimates - r2.fold_estimates;
  out.fold_epsilons = Eigen::VectorXd::Zero(r1.folds);
  out.ic_values = r1.ic_values - r2.ic_values;
  out.fold_assignment = r1.fold_assignment;
  out.fold_variances = Eigen::VectorXd::Zero(r1.folds);
  for (std::size_t i = 0; i < out.fold_assignment.size(); ++i) {
    const double ic = out.ic_values[static_cast<Index>(i)];
    out.fold_variances[out.fold_assignment[i]] += ic * ic;
  }
  for (int v = 0; v < r1.folds; ++v) {
    out.fold_variances[v] /= static_cast<double>(r1.fold_sizes[static_cast<std::size_t>(v)]) - 1.0;
  }
  out.fold_degenerate.assign(static_cast<std::size_t>(r1.folds), false);
  finalize(out);
  out.psi_raw = out.psi * out.bounds.width();
  out.ci_raw = {out.ci.lower * out.bounds.width(), out.ci.upper * out.bounds.width()};
  return out;
}

RuleValueEstimate CvTmleResult::as_estimate() const {
  RuleValueEstimate e;
  e.estimator = EstimatorKind::cv_tmle;
  e.psi = psi;
  e.psi_raw = psi_raw;
  e.ic_values = ic_values;
  e.variance = variance;
  e.ci = ci;
  e.ci_raw = ci_raw;
  e.n = n;
  e.bounds = bounds;
  for (bool b : fold_degenerate) e.degenerate = e.degenerate || b;
  return e;
}

json CvTmleResult::to_json() const {
  json folds_json = json::array();
  for (int v = 0; v < folds; ++v) {
    const auto u = static_cast<std::size_t>(v);
    json f{{"fold", v},
           {"size", fold_sizes[u]},
           {"estimate", fold_estimates[v]},
           {"variance", fold_variances[v]},
           {"epsilon", fold_epsilons[v]},
           {"degenerate", fold_degenerate[u]}};
    if (u < fold_rule_summaries.size()) f["rule"] = fold_rule_summaries[u];
    folds_json.push_back(std::move(f));
  }
  return {{"estimator", "cv_tmle"},
          {"psi", psi},
          {"psi_raw", psi_raw},
          {"percent", 100.0 * psi_raw},
          {"sigma2", sigma2},
          {"variance", variance},
          {"ci_lower", ci.lower},
          {"ci_upper", ci.upper},
          {"ci_raw_lower", ci_raw.lower},
          {"ci_raw_upper", ci_raw.upper},
          {"n", n},
          {"V", folds},
          {"fold_hash", fold_hash},
          {"folds", std::move(folds_json)}};
}

}  // namespace dtrval
