#include "dtrval/analysis.hpp"

#include <cstdio>
#include <ostream>
#include <set>

#include "dtrval/error.hpp"
#include "dtrval/rng.hpp"

namespace dtrval {

namespace {

const std::set<std::string> kAnalysisKeys = {"library", "q_library", "odtr_library", "folds",
                                             "seed",    "g",         "g_min",        "ensemble", "rule_risk"};

std::vector<LearnerSpec> parse_tags(const json& j, const std::string& key, Link link) {
  if (!j.is_array() || j.empty()) throw InvalidConfiguration("analysis field '" + key + "' must be a non-empty list of learner tags");
  std::vector<LearnerSpec> out;
  for (const json& t : j) {
    if (!t.is_string()) throw InvalidConfiguration("analysis field '" + key + "' must be a list of learner tags");
    out.push_back(LearnerSpec::parse(t.get<std::string>(), link));
  }
  return out;
}

template <typename T>
T field(const json& j, const std::string& key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw InvalidConfiguration("analysis field '" + key + "' has the wrong type");
  }
}

std::uint64_t hash_text(const std::string& s) { return derive_seed(0, s); }

}  // namespace

AnalysisConfig AnalysisConfig::from_json(const json& j) {
  if (!j.is_object()) throw InvalidConfiguration("an analysis configuration must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!kAnalysisKeys.count(key)) throw InvalidConfiguration("unknown analysis field '" + key + "'");
  }
  AnalysisConfig c;
  if (j.contains("library")) c.library = library_config_from_string(field<std::string>(j, "library"));
  if (j.contains("q_library")) c.q_library = parse_tags(j["q_library"], "q_library", Link::logit);
  if (j.contains("odtr_library")) c.odtr_library = parse_tags(j["odtr_library"], "odtr_library", Link::identity);
  if (j.contains("folds")) c.folds = field<int>(j, "folds");
  if (j.contains("seed")) c.seed = field<std::uint64_t>(j, "seed");
  if (j.contains("g")) {
    const json& g = j["g"];
    const std::string kind = g.is_string() ? g.get<std::string>()
                                           : (g.is_object() && g.contains("kind") && g["kind"].is_string()
                                                  ? g["kind"].get<std::string>()
                                                  : "");
    if (kind == "known") {
      c.g = TreatmentModelSpec::known(g.is_object() && g.contains("p") ? field<double>(g, "p") : 0.5);
      if (!(c.g.p > 0.0 && c.g.p < 1.0)) throw InvalidConfiguration("known treatment probability must lie in (0,1)");
    } else if (kind == "fit_glm") {
      c.g = TreatmentModelSpec::fitted_glm();
    } else {
      throw InvalidConfiguration("analysis field 'g' must be \"known\", \"fit_glm\" or {\"kind\": ..., \"p\": ...}");
    }
  }
  if (j.contains("g_min")) c.g_min = field<double>(j, "g_min");
  if (j.contains("ensemble")) c.mode = ensemble_mode_from_string(field<std::string>(j, "ensemble"));
  if (j.contains("rule_risk")) c.rule_risk = value_risk_from_string(field<std::string>(j, "rule_risk"));
  if (c.folds < 2) throw InvalidConfiguration("folds must be at least 2");
  if (!(c.g_min > 0.0 && c.g_min < 0.5)) throw InvalidConfiguration("g_min must lie in (0, 0.5)");
  return c;
}

json AnalysisConfig::to_json(Index covariates) const {
  json ql = json::array();
  for (const auto& s : effective_q_library(covariates)) ql.push_back(s.tag());
  json ol = json::array();
  for (const auto& s : effective_odtr_library(covariates)) ol.push_back(s.tag());
  return {{"library", to_string(library)}, {"q_library", std::move(ql)}, {"odtr_library", std::move(ol)},
          {"folds", folds},                {"seed", seed},               {"g", g.to_json()},
          {"g_min", g_min},                {"ensemble", to_string(mode)}, {"rule_risk", to_string(rule_risk)}};
}

std::vector<LearnerSpec> AnalysisConfig::effective_q_library(Index covariates) const {
  return q_library.empty() ? q_library_preset(library, covariates) : q_library;
}

std::vector<LearnerSpec> AnalysisConfig::effective_odtr_library(Index covariates) const {
  return odtr_library.empty() ? odtr_library_preset(library, covariates) : odtr_library;
}

int effective_folds(std::size_t n, int requested, std::vector<std::string>* warnings) {
  int v = requested;
  if (n < static_cast<std::size_t>(10 * requested)) {
    const int reduced = std::max(2, static_cast<int>(n / 10));
    if (reduced < requested) {
      v = reduced;
      if (warnings) {
        warnings->push_back("n = " + std::to_string(n) + " is small for " + std::to_string(requested) +
                            " folds; using " + std::to_string(v) + " folds");
      }
    }
  }
  if (n < static_cast<std::size_t>(2 * v)) {
    throw DataError("n = " + std::to_string(n) + " is too small: need at least " + std::to_string(2 * v) +
                    " observations for " + std::to_string(v) + " folds");
  }
  return v;
}

AnalysisReport run_analysis(const Dataset& data, const AnalysisConfig& config) {
  AnalysisReport report;
  const Dataset d = scale_outcome(data);
  if (d.dim() < 1) throw DataError("the data have no covariate columns");
  const std::vector<LearnerSpec> q_lib = config.effective_q_library(d.dim());
  const std::vector<LearnerSpec> odtr_lib = config.effective_odtr_library(d.dim());
  for (const auto* lib : {&q_lib, &odtr_lib}) {
    for (const LearnerSpec& s : *lib) {
      if (s.family == LearnerFamily::glm_univariate && s.column >= d.dim()) {
        throw InvalidConfiguration("learner '" + s.tag() + "' refers to a covariate the data do not have");
      }
    }
  }
  const int V = effective_folds(d.n(), config.folds, &report.warnings);
  const FoldScheme folds = make_folds(d.n(), V, derive_seed(config.seed, "analysis-folds"));

  CvTmleOptions copts;
  copts.nuisance.q_library = q_lib;
  copts.nuisance.g = config.g;
  copts.nuisance.mode = config.mode;
  copts.nuisance.g_min = config.g_min;
  copts.odtr_library = odtr_lib;
  copts.odtr.mode = config.mode;
  copts.odtr.risk = config.rule_risk;
  copts.odtr_folds = V;
  copts.seed = derive_seed(config.seed, "cv-tmle");

  report.value_odtr = cv_tmle_estimated_rule(d, folds, copts);
  report.value_treat_all = cv_tmle_known_rule(d, TreatmentRule::treat_all(), folds, copts);
  report.value_treat_none = cv_tmle_known_rule(d, TreatmentRule::treat_none(), folds, copts);
  report.odtr_minus_all = contrast(report.value_odtr, report.value_treat_all);
  report.odtr_minus_none = contrast(report.value_odtr, report.value_treat_none);

  NuisanceOptions nopts = copts.nuisance;
  nopts.seed = derive_seed(config.seed, "whole-nuisance");
  const NuisanceFit nf = fit_nuisance(d, nopts, Provenance::whole(d));
  const FoldScheme ofolds = make_folds(d.n(), V, derive_seed(config.seed, "whole-odtr-folds"));
  OdtrOptions oopts = copts.odtr;
  oopts.seed = derive_seed(config.seed, "whole-odtr-search");
  report.rule_summary = fit_odtr(odtr_lib, d, nf, ofolds, oopts);
  report.proportion_treated = apply_rule(report.rule_summary.rule, d).cast<double>().mean();

  const json cfg = config.to_json(d.dim());
  report.provenance = {{"config", cfg},
                       {"config_hash", hash_text(cfg.dump())},
                       {"seed", config.seed},
                       {"V", V},
                       {"requested_V", config.folds},
                       {"n", d.n()},
                       {"fold_hash", folds.hash()},
                       {"version", kVersion},
                       {"covariates", d.column_names()},
                       {"outcome_bounds", {d.bounds().lower, d.bounds().upper}}};
  return report;
}

json AnalysisReport::to_json() const {
  json rule = rule_summary.to_json();
  rule["proportion_treated"] = proportion_treated;
  return {{"value_odtr", value_odtr.to_json()},
          {"value_treat_all", value_treat_all.to_json()},
          {"value_treat_none", value_treat_none.to_json()},
          {"contrasts",
           {{"odtr_minus_all", odtr_minus_all.to_json()}, {"odtr_minus_none", odtr_minus_none.to_json()}}},
          {"rule_summary", std::move(rule)},
          {"provenance", provenance},
          {"warnings", warnings}};
}

void write_report_csv(std::ostream& out, const AnalysisReport& report) {
  auto line = [&](const char* name, const CvTmleResult& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%.10g,%.10g,%.10g,%.4f,%.4f,%.4f\n", name, r.psi_raw, r.ci_raw.lower,
                  r.ci_raw.upper, 100.0 * r.psi_raw, 100.0 * r.ci_raw.lower, 100.0 * r.ci_raw.upper);
    out << buf;
  };
  out << "quantity,estimate,ci_lower,ci_upper,percent,percent_ci_lower,percent_ci_upper\n";
  line("value_odtr", report.value_odtr);
  line("value_treat_all", report.value_treat_all);
  line("value_treat_none", report.value_treat_none);
  line("odtr_minus_all", report.odtr_minus_all);
  line("odtr_minus_none", report.odtr_minus_none);
}

}  // namespace dtrval
