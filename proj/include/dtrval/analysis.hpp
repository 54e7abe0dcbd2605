#pragma once

// Real-data analysis: estimate an optimal rule and compare its CV-TMLE
// value against treating everyone and treating no one.

#include <iosfwd>
#include <string>
#include <vector>

#include "dtrval/cvtmle.hpp"
#include "dtrval/odtr.hpp"

namespace dtrval {

inline constexpr const char* kVersion = "0.1.0";

struct AnalysisConfig {
  LibraryConfig library = LibraryConfig::least;
  std::vector<LearnerSpec> q_library;     // overrides the preset when non-empty
  std::vector<LearnerSpec> odtr_library;  // likewise
  int folds = 10;
  std::uint64_t seed = 1;
  TreatmentModelSpec g = TreatmentModelSpec::fitted_glm();
  double g_min = 0.01;
  EnsembleMode mode = EnsembleMode::convex;
  ValueRisk rule_risk = ValueRisk::iptw;

  static AnalysisConfig from_json(const json& j);
  // Presets are sized to the number of covariate columns.
  json to_json(Index covariates = 4) const;
  std::vector<LearnerSpec> effective_q_library(Index covariates = 4) const;
  std::vector<LearnerSpec> effective_odtr_library(Index covariates = 4) const;
};

// Fold count actually used for n observations: if n < 10 V the count drops
// to max(2, n / 10) with a warning; fewer than two observations per fold
// is a DataError.
int effective_folds(std::size_t n, int requested, std::vector<std::string>* warnings);

struct AnalysisReport {
  CvTmleResult value_odtr;
  CvTmleResult value_treat_all;
  CvTmleResult value_treat_none;
  CvTmleResult odtr_minus_all;
  CvTmleResult odtr_minus_none;
  OdtrFit rule_summary;              // fit on the whole sample
  double proportion_treated = 0.0;   // under the whole-sample rule
  json provenance;
  std::vector<std::string> warnings;

  json to_json() const;
};

AnalysisReport run_analysis(const Dataset& data, const AnalysisConfig& config);

// quantity, estimate, ci_lower, ci_upper on the outcome scale, plus percents.
void write_report_csv(std::ostream& out, const AnalysisReport& report);

}  // namespace dtrval
