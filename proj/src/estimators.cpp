#include "dtrval/estimators.hpp"

#include <cmath>

#include "dtrval/error.hpp"
#include "dtrval/learners.hpp"

namespace dtrval {

std::string to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::gcomp: return "gcomp";
    case EstimatorKind::iptw: return "iptw";
    case EstimatorKind::iptw_dr: return "iptw_dr";
    case EstimatorKind::tmle: return "tmle";
    case EstimatorKind::cv_tmle: return "cv_tmle";
  }
  return "?";
}

EstimatorKind estimator_from_string(const std::string& s) {
  if (s == "gcomp") return EstimatorKind::gcomp;
  if (s == "iptw") return EstimatorKind::iptw;
  if (s == "iptw_dr") return EstimatorKind::iptw_dr;
  if (s == "tmle") return EstimatorKind::tmle;
  if (s == "cv_tmle") return EstimatorKind::cv_tmle;
  throw InvalidConfiguration("unknown estimator '" + s + "'");
}

Interval wald_interval(double psi, double variance) {
  const double half = kZ975 * std::sqrt(std::max(variance, 0.0));
  return {psi - half, psi + half};
}

double ic_variance(const Eigen::VectorXd& ic) {
  return ic.squaredNorm() / static_cast<double>(ic.size());
}

json RuleValueEstimate::to_json() const {
  json j{{"estimator", to_string(estimator)},
         {"psi", psi},
         {"psi_raw", psi_raw},
         {"variance", variance},
         {"n", n},
         {"degenerate", degenerate}};
  j["ci_lower"] = ci ? json(ci->lower) : json(nullptr);
  j["ci_upper"] = ci ? json(ci->upper) : json(nullptr);
  if (ci_raw) {
    j["ci_raw_lower"] = ci_raw->lower;
    j["ci_raw_upper"] = ci_raw->upper;
  }
  j["epsilon"] = epsilon ? json(*epsilon) : json(nullptr);
  if (epsilon) j["epsilon_clamped"] = epsilon_clamped;
  return j;
}

Eigen::VectorXd RuleInputs::clever_covariate() const {
  Eigen::VectorXd h(a.size());
  for (Index i = 0; i < a.size(); ++i) h[i] = a[i] == rule[i] ? 1.0 / g_obs[i] : 0.0;
  return h;
}

RuleInputs make_rule_inputs(const Dataset& d, const Eigen::VectorXi& rule, const NuisanceFit& nf) {
  const Eigen::MatrixXd& w = d.covariates();
  if (rule.size() != w.rows()) throw ShapeError("rule assignments and dataset disagree in length");
  RuleInputs in;
  in.rule = rule;
  in.a = d.treatment();
  in.y = d.outcome();
  in.g_obs = nf.g(d.treatment(), w);
  const Eigen::VectorXd q0 = nf.q(0, w);
  const Eigen::VectorXd q1 = nf.q(1, w);
  in.q_obs.resize(w.rows());
  in.q_rule.resize(w.rows());
  for (Index i = 0; i < w.rows(); ++i) {
    in.q_obs[i] = in.a[i] == 1 ? q1[i] : q0[i];
    in.q_rule[i] = rule[i] == 1 ? q1[i] : q0[i];
  }
  return in;
}

namespace {

RuleValueEstimate finish(EstimatorKind kind, double psi, Eigen::VectorXd ic, const Dataset& d) {
  RuleValueEstimate e;
  e.estimator = kind;
  e.psi = psi;
  e.bounds = d.bounds();
  e.psi_raw = d.bounds().unscale(psi);
  e.n = d.n();
  if (ic.size() > 0) {
    e.variance = ic_variance(ic) / static_cast<double>(ic.size());
    e.ci = wald_interval(psi, e.variance);
    e.ci_raw = Interval{d.bounds().unscale(e.ci->lower), d.bounds().unscale(e.ci->upper)};
  }
  e.ic_values = std::move(ic);
  return e;
}

}  // namespace

TargetedValue target_rule_value(const RuleInputs& in) {
  const Index n = in.y.size();
  const Eigen::VectorXd h = in.clever_covariate();
  TargetedValue out;
  Eigen::VectorXd offsets(n);
  for (Index i = 0; i < n; ++i) offsets[i] = bounded_logit(in.q_obs[i]);

  if (!(h.sum() > 0.0)) {
    out.degenerate = true;
    out.epsilon = 0.0;
  } else {
    const FluctuationResult fr = fluctuation_fit(offsets, in.y, h);
    out.epsilon = fr.epsilon;
    out.clamped = fr.clamped;
  }

  out.q_star_obs.resize(n);
  out.q_star_rule.resize(n);
  if (out.epsilon == 0.0) {
    out.q_star_obs = in.q_obs;
    out.q_star_rule = in.q_rule;
  } else {
    for (Index i = 0; i < n; ++i) {
      out.q_star_obs[i] = logistic(offsets[i] + out.epsilon);
      out.q_star_rule[i] = logistic(bounded_logit(in.q_rule[i]) + out.epsilon);
    }
  }
  out.psi = out.q_star_rule.mean();
  out.ic = (h.array() * (in.y - out.q_star_obs).array() + out.q_star_rule.array() - out.psi).matrix();
  return out;
}

RuleValueEstimate gcomp(const Dataset& d, const TreatmentRule& rule, const NuisanceFit& nf) {
  const RuleInputs in = make_rule_inputs(d, apply_rule(rule, d), nf);
  return finish(EstimatorKind::gcomp, in.q_rule.mean(), Eigen::VectorXd(), d);
}

RuleValueEstimate iptw(const Dataset& d, const TreatmentRule& rule, const NuisanceFit& nf) {
  const RuleInputs in = make_rule_inputs(d, apply_rule(rule, d), nf);
  const Eigen::VectorXd terms = in.clever_covariate().cwiseProduct(in.y);
  const double psi = terms.mean();
  return finish(EstimatorKind::iptw, psi, (terms.array() - psi).matrix(), d);
}

RuleValueEstimate iptw_dr(const Dataset& d, const TreatmentRule& rule, const NuisanceFit& nf) {
  const RuleInputs in = make_rule_inputs(d, apply_rule(rule, d), nf);
  const Eigen::VectorXd terms =
      (in.clever_covariate().array() * (in.y - in.q_obs).array() + in.q_rule.array()).matrix();
  const double psi = terms.mean();
  return finish(EstimatorKind::iptw_dr, psi, (terms.array() - psi).matrix(), d);
}

RuleValueEstimate tmle(const Dataset& d, const TreatmentRule& rule, const NuisanceFit& nf) {
  const RuleInputs in = make_rule_inputs(d, apply_rule(rule, d), nf);
  TargetedValue t = target_rule_value(in);
  RuleValueEstimate e = finish(EstimatorKind::tmle, t.psi, std::move(t.ic), d);
  e.epsilon = t.epsilon;
  e.epsilon_clamped = t.clamped;
  e.degenerate = t.degenerate;
  return e;
}

RuleValueEstimate contrast(const RuleValueEstimate& e1, const RuleValueEstimate& e2) {
  if (e1.ic_values.size() == 0 || e2.ic_values.size() == 0) {
    throw AlignmentError("contrast needs influence-curve values on both estimates");
  }
  if (e1.ic_values.size() != e2.ic_values.size() || e1.n != e2.n) {
    throw AlignmentError("contrast of estimates computed on different observations");
  }
  if (e1.bounds.lower != e2.bounds.lower || e1.bounds.upper != e2.bounds.upper) {
    throw AlignmentError("contrast of estimates on different outcome scales");
  }
  RuleValueEstimate out;
  out.estimator = e1.estimator;
  out.n = e1.n;
  out.bounds = e1.bounds;
  out.psi = e1.psi - e2.psi;
  out.psi_raw = out.psi * e1.bounds.width();
  out.ic_values = e1.ic_values - e2.ic_values;
  out.variance = ic_variance(out.ic_values) / static_cast<double>(out.n);
  out.ci = wald_interval(out.psi, out.variance);
  out.ci_raw = Interval{out.ci->lower * e1.bounds.width(), out.ci->upper * e1.bounds.width()};
  return out;
}

}  // namespace dtrval
