#include "dtrval/study.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <ostream>
#include <set>
#include <thread>

#include "dtrval/cvtmle.hpp"
#include "dtrval/dgp.hpp"
#include "dtrval/error.hpp"
#include "dtrval/odtr.hpp"
#include "dtrval/rng.hpp"

namespace dtrval {

std::string to_string(StudyTarget t) {
  switch (t) {
    case StudyTarget::known_rule: return "known_rule";
    case StudyTarget::true_odtr: return "true_odtr";
    case StudyTarget::data_adaptive: return "data_adaptive";
  }
  return "?";
}

std::string to_string(TruthKind t) {
  switch (t) {
    case TruthKind::fixed: return "fixed";
    case TruthKind::sample_specific: return "sample_specific";
    case TruthKind::sample_split: return "sample_split";
  }
  return "?";
}

StudyTarget study_target_from_string(const std::string& s) {
  if (s == "known_rule") return StudyTarget::known_rule;
  if (s == "true_odtr") return StudyTarget::true_odtr;
  if (s == "data_adaptive") return StudyTarget::data_adaptive;
  throw InvalidConfiguration("unknown study target '" + s + "' (expected known_rule, true_odtr or data_adaptive)");
}

TruthKind truth_kind_from_string(const std::string& s) {
  if (s == "fixed") return TruthKind::fixed;
  if (s == "sample_specific") return TruthKind::sample_specific;
  if (s == "sample_split") return TruthKind::sample_split;
  throw InvalidConfiguration("unknown truth kind '" + s + "' (expected fixed, sample_specific or sample_split)");
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

const std::set<std::string> kStudyKeys = {
    "name",  "target",  "library", "replications", "n",      "folds",      "master_seed", "oracle_draws",
    "fixed_truth_draws", "g", "g_min", "ensemble", "rule_risk", "threads", "trace", "rows", "q_library", "odtr_library"};

template <typename T>
T get_field(const json& j, const std::string& key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw InvalidConfiguration("study field '" + key + "' has the wrong type");
  }
}

std::vector<LearnerSpec> parse_library(const json& j, const std::string& key, Link link) {
  if (!j.is_array()) throw InvalidConfiguration("study field '" + key + "' must be a list of learner tags");
  std::vector<LearnerSpec> out;
  for (const json& t : j) {
    if (!t.is_string()) throw InvalidConfiguration("study field '" + key + "' must be a list of learner tags");
    out.push_back(LearnerSpec::parse(t.get<std::string>(), link));
  }
  if (out.empty()) throw InvalidConfiguration("study field '" + key + "' is empty");
  return out;
}

}  // namespace

StudyConfig StudyConfig::from_json(const json& j) {
  if (!j.is_object()) throw InvalidConfiguration("a study configuration must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!kStudyKeys.count(key)) throw InvalidConfiguration("unknown study field '" + key + "'");
  }
  StudyConfig c;
  if (j.contains("name")) c.name = get_field<std::string>(j, "name");
  if (j.contains("target")) c.target = study_target_from_string(get_field<std::string>(j, "target"));
  if (j.contains("library")) c.library = library_config_from_string(get_field<std::string>(j, "library"));
  if (j.contains("replications")) c.replications = get_field<int>(j, "replications");
  if (j.contains("n")) {
    const long long n = get_field<long long>(j, "n");
    if (n < 1) throw InvalidConfiguration("study field 'n' must be positive");
    c.n = static_cast<std::size_t>(n);
  }
  if (j.contains("folds")) c.folds = get_field<int>(j, "folds");
  if (j.contains("master_seed")) c.master_seed = get_field<std::uint64_t>(j, "master_seed");
  if (j.contains("oracle_draws")) c.oracle_draws = get_field<std::size_t>(j, "oracle_draws");
  if (j.contains("fixed_truth_draws")) c.fixed_truth_draws = get_field<std::size_t>(j, "fixed_truth_draws");
  if (j.contains("g")) {
    const json& g = j.at("g");
    const std::string kind = g.is_string() ? g.get<std::string>() : (g.is_object() && g.contains("kind") && g["kind"].is_string() ? g["kind"].get<std::string>() : "");
    if (kind == "known") {
      c.g = TreatmentModelSpec::known(g.is_object() && g.contains("p") ? get_field<double>(g, "p") : 0.5);
    } else if (kind == "fit_glm") {
      c.g = TreatmentModelSpec::fitted_glm();
    } else {
      throw InvalidConfiguration("study field 'g' must be \"known\", \"fit_glm\" or {\"kind\": ..., \"p\": ...}");
    }
  }
  if (j.contains("g_min")) c.g_min = get_field<double>(j, "g_min");
  if (j.contains("ensemble")) c.mode = ensemble_mode_from_string(get_field<std::string>(j, "ensemble"));
  if (j.contains("rule_risk")) c.rule_risk = value_risk_from_string(get_field<std::string>(j, "rule_risk"));
  if (j.contains("threads")) c.threads = get_field<int>(j, "threads");
  if (j.contains("trace")) c.trace = get_field<bool>(j, "trace");
  if (j.contains("rows")) {
    if (!j["rows"].is_array()) throw InvalidConfiguration("study field 'rows' must be a list");
    for (const json& r : j["rows"]) {
      if (!r.is_object() || !r.contains("estimator")) {
        throw InvalidConfiguration("each study row needs an 'estimator' (and optionally a 'truth')");
      }
      StudyRow row;
      row.estimator = estimator_from_string(get_field<std::string>(r, "estimator"));
      row.truth = r.contains("truth") ? truth_kind_from_string(get_field<std::string>(r, "truth"))
                                      : (c.target == StudyTarget::data_adaptive
                                             ? (row.estimator == EstimatorKind::cv_tmle ? TruthKind::sample_split
                                                                                        : TruthKind::sample_specific)
                                             : TruthKind::fixed);
      c.rows.push_back(row);
    }
  }
  if (j.contains("q_library")) c.q_library = parse_library(j["q_library"], "q_library", Link::logit);
  if (j.contains("odtr_library")) c.odtr_library = parse_library(j["odtr_library"], "odtr_library", Link::identity);
  c.validate();
  return c;
}

void StudyConfig::validate() const {
  if (replications < 1) throw InvalidConfiguration("replications must be at least 1");
  if (folds < 2) throw InvalidConfiguration("folds must be at least 2");
  if (n < static_cast<std::size_t>(2 * folds)) {
    throw InvalidConfiguration("n must be at least twice the number of folds");
  }
  if (oracle_draws < 1 || fixed_truth_draws < 1) throw InvalidConfiguration("oracle draw counts must be positive");
  if (!(g_min > 0.0 && g_min < 0.5)) throw InvalidConfiguration("g_min must lie in (0, 0.5)");
  if (g.kind == TreatmentModelSpec::Kind::known && !(g.p > 0.0 && g.p < 1.0)) {
    throw InvalidConfiguration("known treatment probability must lie in (0,1)");
  }
  if (threads < 1) throw InvalidConfiguration("threads must be at least 1");
  for (const StudyRow& r : effective_rows()) {
    const bool cv = r.estimator == EstimatorKind::cv_tmle;
    if (target != StudyTarget::data_adaptive && r.truth != TruthKind::fixed) {
      throw InvalidConfiguration("target " + to_string(target) + " only has a fixed truth; got " +
                                 to_string(r.truth) + " for " + to_string(r.estimator));
    }
    if (target == StudyTarget::data_adaptive && r.truth == TruthKind::fixed) {
      throw InvalidConfiguration("data_adaptive targets need a sample_specific or sample_split truth");
    }
    if (cv && r.truth == TruthKind::sample_specific) {
      throw InvalidConfiguration("cv_tmle estimates a sample_split truth, not sample_specific");
    }
    if (!cv && r.truth == TruthKind::sample_split) {
      throw InvalidConfiguration(to_string(r.estimator) + " has no sample_split truth; use sample_specific");
    }
  }
}

std::vector<StudyRow> StudyConfig::effective_rows() const {
  if (!rows.empty()) return rows;
  std::vector<StudyRow> out;
  for (EstimatorKind e : {EstimatorKind::gcomp, EstimatorKind::iptw, EstimatorKind::iptw_dr, EstimatorKind::tmle,
                          EstimatorKind::cv_tmle}) {
    TruthKind t = TruthKind::fixed;
    if (target == StudyTarget::data_adaptive) {
      t = e == EstimatorKind::cv_tmle ? TruthKind::sample_split : TruthKind::sample_specific;
    }
    out.push_back({e, t});
  }
  return out;
}

std::vector<LearnerSpec> StudyConfig::effective_q_library() const {
  return q_library.empty() ? q_library_preset(library) : q_library;
}

std::vector<LearnerSpec> StudyConfig::effective_odtr_library() const {
  return odtr_library.empty() ? odtr_library_preset(library) : odtr_library;
}

json StudyConfig::to_json() const {
  json r = json::array();
  for (const StudyRow& row : effective_rows()) r.push_back({{"estimator", to_string(row.estimator)}, {"truth", to_string(row.truth)}});
  json ql = json::array();
  for (const auto& s : effective_q_library()) ql.push_back(s.tag());
  json ol = json::array();
  for (const auto& s : effective_odtr_library()) ol.push_back(s.tag());
  return {{"name", name},
          {"target", to_string(target)},
          {"library", to_string(library)},
          {"replications", replications},
          {"n", n},
          {"folds", folds},
          {"master_seed", master_seed},
          {"oracle_draws", oracle_draws},
          {"fixed_truth_draws", fixed_truth_draws},
          {"g", g.to_json()},
          {"g_min", g_min},
          {"ensemble", to_string(mode)}, {"rule_risk", to_string(rule_risk)},
          {"threads", threads},
          {"trace", trace},
          {"rows", std::move(r)},
          {"q_library", std::move(ql)},
          {"odtr_library", std::move(ol)}};
}

// ---------------------------------------------------------------------------
// Aggregation

json PerformanceRow::to_json() const {
  return {{"study", study},
          {"estimator", to_string(estimator)},
          {"library", to_string(library)},
          {"target", to_string(target)},
          {"truth", to_string(truth_kind)},
          {"replications", replications},
          {"mean_estimate", mean_estimate},
          {"mean_truth", mean_truth},
          {"bias", bias},
          {"variance", variance},
          {"mse", mse},
          {"coverage", coverage ? json(*coverage) : json(nullptr)},
          {"mean_ci_width", mean_ci_width ? json(*mean_ci_width) : json(nullptr)},
          {"truth_sd", truth_sd}};
}

PerformanceRow summarize(const std::vector<ReplicationRecord>& records, const StudyConfig& config,
                         EstimatorKind estimator) {
  PerformanceRow row;
  row.study = config.name;
  row.estimator = estimator;
  row.library = config.library;
  row.target = config.target;
  std::vector<const ReplicationRecord*> mine;
  for (const auto& r : records) {
    if (r.estimator == estimator) mine.push_back(&r);
  }
  if (mine.empty()) throw InvalidInput("no replication records for estimator " + to_string(estimator));
  row.truth_kind = mine.front()->truth_kind;
  const double R = static_cast<double>(mine.size());
  row.replications = static_cast<int>(mine.size());

  double sum_est = 0.0, sum_truth = 0.0, sum_err = 0.0, sum_sq = 0.0;
  int with_ci = 0, covered = 0;
  double sum_width = 0.0;
  for (const auto* r : mine) {
    const double err = r->estimate - r->truth;
    sum_est += r->estimate;
    sum_truth += r->truth;
    sum_err += err;
    sum_sq += err * err;
    if (r->ci) {
      ++with_ci;
      covered += r->ci->contains(r->truth) ? 1 : 0;
      sum_width += r->ci->width();
    }
  }
  row.mean_estimate = sum_est / R;
  row.mean_truth = sum_truth / R;
  row.bias = sum_err / R;
  row.mse = sum_sq / R;
  double var = 0.0, truth_var = 0.0;
  for (const auto* r : mine) {
    const double dev = r->estimate - r->truth - row.bias;
    var += dev * dev;
    const double tdev = r->truth - row.mean_truth;
    truth_var += tdev * tdev;
  }
  row.variance = var / R;
  row.truth_sd = std::sqrt(truth_var / R);
  if (with_ci > 0) {
    row.coverage = static_cast<double>(covered) / with_ci;
    row.mean_ci_width = sum_width / with_ci;
  }
  return row;
}

// ---------------------------------------------------------------------------
// Replications

namespace {

struct StudyContext {
  const StudyConfig& config;
  std::vector<StudyRow> rows;
  std::vector<LearnerSpec> q_library;
  std::vector<LearnerSpec> odtr_library;
  double fixed_truth = 0.0;
  std::optional<OraclePanel> panel;
};

std::vector<ReplicationRecord> run_replication(const StudyContext& ctx, int r) {
  const StudyConfig& cfg = ctx.config;
  const std::uint64_t seed = derive_seed(cfg.master_seed, static_cast<std::uint64_t>(r));
  const Dataset d = scale_outcome(draw_dgp(cfg.n, derive_seed(seed, "data")).dataset);

  NuisanceOptions nopts;
  nopts.q_library = ctx.q_library;
  nopts.g = cfg.g;
  nopts.mode = cfg.mode;
  nopts.g_min = cfg.g_min;
  nopts.seed = derive_seed(seed, "nuisance");

  bool need_whole = false, need_cv = false;
  for (const StudyRow& row : ctx.rows) {
    (row.estimator == EstimatorKind::cv_tmle ? need_cv : need_whole) = true;
  }

  std::vector<ReplicationRecord> out;
  auto record = [&](const StudyRow& row, const RuleValueEstimate& e, double truth) {
    ReplicationRecord rec;
    rec.replication = r;
    rec.seed = seed;
    rec.estimator = row.estimator;
    rec.truth_kind = row.truth;
    rec.estimate = e.psi_raw;
    rec.ci = e.ci_raw;
    rec.truth = truth;
    rec.degenerate = e.degenerate;
    out.push_back(rec);
  };

  std::optional<NuisanceFit> nf;
  std::optional<TreatmentRule> rule;
  if (need_whole) {
    nf.emplace(fit_nuisance(d, nopts, Provenance::whole(d)));
    if (cfg.target == StudyTarget::known_rule) {
      rule = oracle_true_rule();
    } else {
      const FoldScheme ofolds = make_folds(d.n(), cfg.folds, derive_seed(seed, "odtr-folds"));
      OdtrOptions oopts;
      oopts.mode = cfg.mode;
      oopts.risk = cfg.rule_risk;
      oopts.seed = derive_seed(seed, "odtr-search");
      rule = fit_odtr(ctx.odtr_library, d, *nf, ofolds, oopts).rule;
    }
  }

  std::optional<CvTmleResult> cv;
  if (need_cv) {
    CvTmleOptions copts;
    copts.nuisance = nopts;
    copts.odtr_library = ctx.odtr_library;
    copts.odtr.mode = cfg.mode;
    copts.odtr.risk = cfg.rule_risk;
    copts.odtr_folds = cfg.folds;
    copts.seed = derive_seed(seed, "cv-tmle");
    const FoldScheme folds = make_folds(d.n(), cfg.folds, derive_seed(seed, "cv-folds"));
    cv = cfg.target == StudyTarget::known_rule ? cv_tmle_known_rule(d, oracle_true_rule(), folds, copts)
                                               : cv_tmle_estimated_rule(d, folds, copts);
  }

  std::optional<double> specific_truth;
  for (const StudyRow& row : ctx.rows) {
    double truth = ctx.fixed_truth;
    if (row.truth == TruthKind::sample_specific) {
      if (!specific_truth) specific_truth = ctx.panel->value(*rule).value;
      truth = *specific_truth;
    } else if (row.truth == TruthKind::sample_split) {
      double total = 0.0;
      for (const TreatmentRule& fr : cv->fold_rules) total += ctx.panel->value(fr).value;
      truth = total / static_cast<double>(cv->fold_rules.size());
    }
    switch (row.estimator) {
      case EstimatorKind::gcomp: record(row, gcomp(d, *rule, *nf), truth); break;
      case EstimatorKind::iptw: record(row, iptw(d, *rule, *nf), truth); break;
      case EstimatorKind::iptw_dr: record(row, iptw_dr(d, *rule, *nf), truth); break;
      case EstimatorKind::tmle: record(row, tmle(d, *rule, *nf), truth); break;
      case EstimatorKind::cv_tmle: record(row, cv->as_estimate(), truth); break;
    }
  }
  return out;
}

}  // namespace

StudyResult run_study(const StudyConfig& config) {
  config.validate();
  StudyContext ctx{config, config.effective_rows(), config.effective_q_library(), config.effective_odtr_library(),
                   0.0, std::nullopt};
  bool need_fixed = false, need_panel = false;
  for (const StudyRow& row : ctx.rows) {
    (row.truth == TruthKind::fixed ? need_fixed : need_panel) = true;
  }
  StudyResult result;
  result.config = config;
  if (need_fixed) {
    ctx.fixed_truth =
        oracle_value(oracle_true_rule(), config.fixed_truth_draws, derive_seed(config.master_seed, "fixed-truth"))
            .value;
  }
  if (need_panel) ctx.panel.emplace(continuous_dgp(), config.oracle_draws, derive_seed(config.master_seed, "oracle-panel"));
  result.fixed_truth = ctx.fixed_truth;

  const auto R = static_cast<std::size_t>(config.replications);
  std::vector<std::vector<ReplicationRecord>> per_rep(R);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t r = next.fetch_add(1);
      if (r >= R) return;
      try {
        per_rep[r] = run_replication(ctx, static_cast<int>(r));
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = R;
        return;
      }
    }
  };
  const int threads = std::max(1, std::min<int>(config.threads, config.replications));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  for (auto& recs : per_rep) {
    for (auto& rec : recs) result.records.push_back(std::move(rec));
  }
  for (const StudyRow& row : ctx.rows) result.rows.push_back(summarize(result.records, config, row.estimator));
  return result;
}

// ---------------------------------------------------------------------------
// Output

namespace {

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

}  // namespace

void write_performance_csv(std::ostream& out, const std::vector<PerformanceRow>& rows) {
  out << "study,estimator,library,target,truth,replications,mean_estimate,mean_truth,bias,variance,mse,coverage,"
         "mean_ci_width,truth_sd\n";
  for (const auto& r : rows) {
    out << r.study << ',' << to_string(r.estimator) << ',' << to_string(r.library) << ',' << to_string(r.target)
        << ',' << to_string(r.truth_kind) << ',' << r.replications << ',' << fmt(r.mean_estimate) << ','
        << fmt(r.mean_truth) << ',' << fmt(r.bias) << ',' << fmt(r.variance) << ',' << fmt(r.mse) << ','
        << (r.coverage ? fmt(*r.coverage) : "") << ',' << (r.mean_ci_width ? fmt(*r.mean_ci_width) : "") << ','
        << fmt(r.truth_sd) << '\n';
  }
}

json performance_json(const std::vector<PerformanceRow>& rows) {
  json out = json::array();
  for (const auto& r : rows) out.push_back(r.to_json());
  return out;
}

void write_trace(std::ostream& out, const std::vector<ReplicationRecord>& records) {
  out << "replication,seed,estimator,truth_kind,estimate,ci_lower,ci_upper,truth,degenerate\n";
  for (const auto& r : records) {
    out << r.replication << ',' << r.seed << ',' << to_string(r.estimator) << ',' << to_string(r.truth_kind) << ','
        << fmt(r.estimate) << ',' << (r.ci ? fmt(r.ci->lower) : "") << ',' << (r.ci ? fmt(r.ci->upper) : "") << ','
        << fmt(r.truth) << ',' << (r.degenerate ? 1 : 0) << '\n';
  }
}

}  // namespace dtrval
