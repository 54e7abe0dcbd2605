#pragma once

// Replicated simulation studies and their performance summaries.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dtrval/estimators.hpp"
#include "dtrval/odtr.hpp"
#include "dtrval/superlearner.hpp"

namespace dtrval {

// What the estimators aim at.
//   known_rule:    the value of the true optimal rule, treated as known.
//   true_odtr:     the same fixed value, but the rule is estimated.
//   data_adaptive: the true value of the rule estimated on this sample
//                  (or, for CV-TMLE, the fold-averaged training rules).
enum class StudyTarget { known_rule, true_odtr, data_adaptive };
enum class TruthKind { fixed, sample_specific, sample_split };

std::string to_string(StudyTarget t);
std::string to_string(TruthKind t);
StudyTarget study_target_from_string(const std::string& s);
TruthKind truth_kind_from_string(const std::string& s);

struct StudyRow {
  EstimatorKind estimator = EstimatorKind::tmle;
  TruthKind truth = TruthKind::fixed;
};

struct StudyConfig {
  std::string name = "study";
  StudyTarget target = StudyTarget::known_rule;
  LibraryConfig library = LibraryConfig::least;
  int replications = 200;
  std::size_t n = 1000;
  int folds = 10;
  std::uint64_t master_seed = 20240101;
  std::size_t oracle_draws = 100000;
  std::size_t fixed_truth_draws = 1000000;
  TreatmentModelSpec g = TreatmentModelSpec::fitted_glm();
  double g_min = 0.01;
  EnsembleMode mode = EnsembleMode::convex;
  ValueRisk rule_risk = ValueRisk::iptw;
  int threads = 1;
  bool trace = false;
  std::vector<StudyRow> rows;  // empty = the default rows for `target`
  // Explicit learner lists; when empty the presets for `library` are used.
  std::vector<LearnerSpec> q_library;
  std::vector<LearnerSpec> odtr_library;

  // Validates and fills defaults; throws InvalidConfiguration.
  static StudyConfig from_json(const json& j);
  json to_json() const;
  std::vector<StudyRow> effective_rows() const;
  void validate() const;
  std::vector<LearnerSpec> effective_q_library() const;
  std::vector<LearnerSpec> effective_odtr_library() const;
};

struct ReplicationRecord {
  int replication = 0;
  std::uint64_t seed = 0;
  EstimatorKind estimator = EstimatorKind::tmle;
  TruthKind truth_kind = TruthKind::fixed;
  double estimate = 0.0;
  std::optional<Interval> ci;
  double truth = 0.0;
  bool degenerate = false;
};

struct PerformanceRow {
  std::string study;
  EstimatorKind estimator = EstimatorKind::tmle;
  LibraryConfig library = LibraryConfig::least;
  StudyTarget target = StudyTarget::known_rule;
  TruthKind truth_kind = TruthKind::fixed;
  int replications = 0;
  double mean_estimate = 0.0;
  double mean_truth = 0.0;
  double bias = 0.0;      // mean(estimate - truth)
  double variance = 0.0;  // (1/R) sum (error - bias)^2
  double mse = 0.0;       // mean((estimate - truth)^2)
  std::optional<double> coverage;
  std::optional<double> mean_ci_width;
  double truth_sd = 0.0;  // spread of the per-replication truths

  json to_json() const;
};

// Summarises one estimator's records.
PerformanceRow summarize(const std::vector<ReplicationRecord>& records, const StudyConfig& config,
                         EstimatorKind estimator);

struct StudyResult {
  StudyConfig config;
  double fixed_truth = 0.0;
  std::vector<ReplicationRecord> records;  // replication-major, in row order
  std::vector<PerformanceRow> rows;
};

StudyResult run_study(const StudyConfig& config);

void write_performance_csv(std::ostream& out, const std::vector<PerformanceRow>& rows);
json performance_json(const std::vector<PerformanceRow>& rows);
void write_trace(std::ostream& out, const std::vector<ReplicationRecord>& records);

}  // namespace dtrval
