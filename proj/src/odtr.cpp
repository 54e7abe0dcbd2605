#include "dtrval/odtr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "dtrval/dgp.hpp"
#include "dtrval/error.hpp"
#include "dtrval/rng.hpp"

namespace dtrval {

EnsembleBlip::EnsembleBlip(std::vector<BlipCandidate> candidates, Eigen::VectorXd alpha, Index dim)
    : candidates_(std::move(candidates)), alpha_(std::move(alpha)), dim_(dim) {
  if (alpha_.size() != static_cast<Index>(candidates_.size())) {
    throw ShapeError("blip weights and candidates disagree in length");
  }
}

Eigen::VectorXd EnsembleBlip::evaluate(const Eigen::MatrixXd& w) const {
  if (w.cols() != dim_) {
    throw ShapeError("blip fitted on " + std::to_string(dim_) + " covariates, got " + std::to_string(w.cols()));
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(w.rows());
  for (std::size_t j = 0; j < candidates_.size(); ++j) {
    const double a = alpha_[static_cast<Index>(j)];
    if (a == 0.0 || !candidates_[j].fit) continue;
    out += a * candidates_[j].fit->predict(Design(w));
  }
  return out;
}

json EnsembleBlip::describe() const {
  json members = json::array();
  for (std::size_t j = 0; j < candidates_.size(); ++j) {
    json m{{"learner", candidates_[j].spec.tag()}, {"weight", alpha_[static_cast<Index>(j)]}};
    if (candidates_[j].fit && alpha_[static_cast<Index>(j)] > 0.0) m["fit"] = candidates_[j].fit->describe();
    members.push_back(std::move(m));
  }
  return {{"kind", "blip_ensemble"}, {"members", std::move(members)}};
}

json OdtrFit::to_json() const {
  json cands = json::array();
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    const auto jj = static_cast<Index>(j);
    json c{{"learner", candidates[j].spec.tag()},
           {"alpha", alpha[jj]},
           {"cv_value", std::isfinite(cv_values[jj]) ? json(cv_values[jj]) : json(nullptr)}};
    if (candidates[j].fit) c["fit"] = candidates[j].fit->describe();
    cands.push_back(std::move(c));
  }
  return {{"candidates", std::move(cands)},
          {"ensemble_cv_value", ensemble_cv_value},
          {"degenerate", degenerate},
          {"rule", rule.to_json()}};
}

Eigen::VectorXd pseudo_outcome(const Dataset& d, const NuisanceFit& nf) {
  const Eigen::MatrixXd& w = d.covariates();
  const Eigen::VectorXd g_obs = nf.g(d.treatment(), w);
  const Eigen::VectorXd q0 = nf.q(0, w);
  const Eigen::VectorXd q1 = nf.q(1, w);
  const Eigen::VectorXd& y = d.outcome();
  Eigen::VectorXd out(w.rows());
  for (Index i = 0; i < w.rows(); ++i) {
    const int a = d.treatment()[i];
    const double q_obs = a == 1 ? q1[i] : q0[i];
    out[i] = (2.0 * a - 1.0) / g_obs[i] * (y[i] - q_obs) + q1[i] - q0[i];
  }
  return out;
}

std::string to_string(ValueRisk r) {
  switch (r) {
    case ValueRisk::iptw: return "iptw";
    case ValueRisk::dr: return "dr";
    case ValueRisk::blip_mse: return "blip_mse";
  }
  return "?";
}

ValueRisk value_risk_from_string(const std::string& s) {
  if (s == "iptw") return ValueRisk::iptw;
  if (s == "dr") return ValueRisk::dr;
  if (s == "blip_mse") return ValueRisk::blip_mse;
  throw InvalidConfiguration("unknown rule risk '" + s + "' (expected iptw, dr or blip_mse)");
}

Eigen::MatrixXd iptw_value_table(const Eigen::VectorXi& a, const Eigen::VectorXd& y, const Eigen::VectorXd& g_obs) {
  Eigen::MatrixXd table = Eigen::MatrixXd::Zero(y.size(), 2);
  for (Index i = 0; i < y.size(); ++i) table(i, a[i]) = y[i] / g_obs[i];
  return table;
}

Eigen::MatrixXd dr_value_table(const Eigen::VectorXi& a, const Eigen::VectorXd& y, const Eigen::VectorXd& g_obs,
                               const Eigen::VectorXd& q0, const Eigen::VectorXd& q1) {
  Eigen::MatrixXd table(y.size(), 2);
  table.col(0) = q0;
  table.col(1) = q1;
  for (Index i = 0; i < y.size(); ++i) table(i, a[i]) += (y[i] - table(i, a[i])) / g_obs[i];
  return table;
}

double table_rule_value(const Eigen::MatrixXd& table, const Eigen::VectorXi& rule) {
  double total = 0.0;
  for (Index i = 0; i < table.rows(); ++i) total += table(i, rule[i]);
  return total / static_cast<double>(table.rows());
}

double iptw_rule_value(const Eigen::VectorXi& rule, const Eigen::VectorXi& a, const Eigen::VectorXd& y,
                       const Eigen::VectorXd& g_obs) {
  return table_rule_value(iptw_value_table(a, y, g_obs), rule);
}

double cv_rule_value(const Eigen::MatrixXd& cv_blips, const Eigen::VectorXd& alpha, const Eigen::MatrixXd& table) {
  const Eigen::VectorXd blip = cv_blips * alpha;
  return table_rule_value(table, (blip.array() > 0.0).cast<int>().matrix());
}

double cv_rule_value(const Eigen::MatrixXd& cv_blips, const Eigen::VectorXd& alpha, const Eigen::VectorXi& a,
                     const Eigen::VectorXd& y, const Eigen::VectorXd& g_obs) {
  return cv_rule_value(cv_blips, alpha, iptw_value_table(a, y, g_obs));
}

namespace {

// Calls f on every composition of `steps` units into k parts.
template <typename F>
void for_each_grid_point(Index k, int steps, F&& f) {
  std::vector<int> parts(static_cast<std::size_t>(k), 0);
  Eigen::VectorXd alpha(k);
  auto rec = [&](auto&& self, Index j, int remaining) -> void {
    if (j == k - 1) {
      parts[static_cast<std::size_t>(j)] = remaining;
      for (Index c = 0; c < k; ++c) alpha[c] = static_cast<double>(parts[static_cast<std::size_t>(c)]) / steps;
      f(alpha);
      return;
    }
    for (int u = remaining; u >= 0; --u) {
      parts[static_cast<std::size_t>(j)] = u;
      self(self, j + 1, remaining - u);
    }
  };
  rec(rec, 0, steps);
}

}  // namespace

Eigen::VectorXd search_alpha(const Eigen::MatrixXd& cv_blips, const Eigen::VectorXi& a, const Eigen::VectorXd& y,
                             const Eigen::VectorXd& g_obs, const OdtrOptions& options) {
  return search_alpha(cv_blips, iptw_value_table(a, y, g_obs), options);
}

Eigen::VectorXd search_alpha(const Eigen::MatrixXd& cv_blips, const Eigen::MatrixXd& table, const OdtrOptions& options) {
  const Index k = cv_blips.cols();
  if (k == 0) throw InvalidInput("no usable blip candidates");
  if (k == 1) return Eigen::VectorXd::Ones(1);

  Eigen::VectorXd best;
  double best_value = -std::numeric_limits<double>::infinity();
  auto consider = [&](const Eigen::VectorXd& alpha) {
    const double v = cv_rule_value(cv_blips, alpha, table);
    if (v > best_value) {
      best_value = v;
      best = alpha;
    }
  };

  for (Index j = 0; j < k; ++j) consider(Eigen::VectorXd::Unit(k, j));
  if (options.mode == EnsembleMode::discrete) return best;

  const int steps = std::max(1, static_cast<int>(std::lround(1.0 / options.grid_resolution)));
  if (k <= options.exhaustive_max) {
    for_each_grid_point(k, steps, consider);
    return best;
  }

  consider(Eigen::VectorXd::Constant(k, 1.0 / static_cast<double>(k)));
  for (Index i = 0; i < k; ++i) {
    for (Index j = i + 1; j < k; ++j) {
      for (int u = 1; u < steps; ++u) {
        Eigen::VectorXd alpha = Eigen::VectorXd::Zero(k);
        alpha[i] = static_cast<double>(u) / steps;
        alpha[j] = 1.0 - alpha[i];
        consider(alpha);
      }
    }
  }
  Rng rng(options.seed);
  std::exponential_distribution<double> expo(1.0);
  for (int r = 0; r < options.random_points; ++r) {
    Eigen::VectorXd alpha(k);
    for (Index j = 0; j < k; ++j) alpha[j] = expo(rng);
    consider(alpha / alpha.sum());
  }

  // Greedy pairwise mass transfer from the incumbent.
  const double step = 1.0 / steps;
  for (int s = 0; s < options.local_steps; ++s) {
    const Eigen::VectorXd start = best;
    for (Index i = 0; i < k; ++i) {
      if (start[i] <= 0.0) continue;
      for (Index j = 0; j < k; ++j) {
        if (i == j) continue;
        Eigen::VectorXd alpha = start;
        const double moved = std::min(step, alpha[i]);
        alpha[i] -= moved;
        alpha[j] += moved;
        consider(alpha);
      }
    }
    if (best == start) break;
  }
  return best;
}

OdtrFit fit_odtr(const std::vector<LearnerSpec>& library, const Dataset& d, const NuisanceFit& nf,
                 const FoldScheme& folds, const OdtrOptions& options) {
  if (library.empty()) throw InvalidConfiguration("ODTR library is empty");
  if (folds.n() != d.n()) throw ShapeError("fold scheme size differs from dataset size");
  const Index n = static_cast<Index>(d.n());
  const auto k = static_cast<Index>(library.size());
  const Eigen::VectorXd pseudo = pseudo_outcome(d, nf);
  const Eigen::VectorXd g_obs = nf.g(d.treatment(), d.covariates());
  const Eigen::MatrixXd table =
      options.risk != ValueRisk::dr
          ? iptw_value_table(d.treatment(), d.outcome(), g_obs)
          : dr_value_table(d.treatment(), d.outcome(), g_obs, nf.q(0, d.covariates()), nf.q(1, d.covariates()));

  std::vector<LearnerSpec> specs = library;
  for (LearnerSpec& s : specs) s.link = Link::identity;

  auto try_fit = [&](const LearnerSpec& spec, const Dataset& part,
                     const Eigen::VectorXd& target) -> std::shared_ptr<const FittedLearner> {
    try {
      return fit(spec, Design(part.covariates()), target,
                 Eigen::VectorXd::Ones(static_cast<Index>(part.n())));
    } catch (const Error&) {
      return nullptr;
    }
  };

  OdtrFit out;
  out.cv_blips = Eigen::MatrixXd::Zero(n, k);
  std::vector<char> failed(specs.size(), 0);
  for (int v = 0; v < folds.folds(); ++v) {
    const auto train_rows = folds.training_rows(v);
    const auto valid_rows = folds.validation_rows(v);
    if (valid_rows.empty()) continue;
    if (train_rows.empty()) throw InvalidConfiguration("an ODTR fold has an empty training set");
    const Dataset train = d.subset(train_rows);
    const Dataset valid = d.subset(valid_rows);
    Eigen::VectorXd train_pseudo(static_cast<Index>(train_rows.size()));
    for (std::size_t r = 0; r < train_rows.size(); ++r) train_pseudo[static_cast<Index>(r)] = pseudo[static_cast<Index>(train_rows[r])];
    out.fold_provenance.push_back(Provenance::training_fold(train, v));
    for (Index j = 0; j < k; ++j) {
      const auto u = static_cast<std::size_t>(j);
      if (failed[u]) continue;
      auto f = try_fit(specs[u], train, train_pseudo);
      if (!f) {
        failed[u] = 1;
        continue;
      }
      const Eigen::VectorXd pred = f->predict(Design(valid.covariates()));
      for (std::size_t r = 0; r < valid_rows.size(); ++r) out.cv_blips(static_cast<Index>(valid_rows[r]), j) = pred[static_cast<Index>(r)];
    }
  }

  out.candidates.resize(specs.size());
  for (Index j = 0; j < k; ++j) {
    const auto u = static_cast<std::size_t>(j);
    out.candidates[u].spec = specs[u];
    if (!failed[u]) out.candidates[u].fit = try_fit(specs[u], d, pseudo);
    if (!out.candidates[u].fit) failed[u] = 1;
  }

  std::vector<Index> ok;
  out.cv_values = Eigen::VectorXd::Constant(k, -std::numeric_limits<double>::infinity());
  for (Index j = 0; j < k; ++j) {
    if (failed[static_cast<std::size_t>(j)]) continue;
    ok.push_back(j);
    out.cv_values[j] = cv_rule_value(out.cv_blips, Eigen::VectorXd::Unit(k, j), table);
  }
  if (ok.empty()) throw InvalidInput("every ODTR candidate failed to fit");

  Eigen::MatrixXd usable(n, static_cast<Index>(ok.size()));
  for (std::size_t c = 0; c < ok.size(); ++c) usable.col(static_cast<Index>(c)) = out.cv_blips.col(ok[c]);
  Eigen::VectorXd sub_alpha;
  if (options.risk != ValueRisk::blip_mse) {
    sub_alpha = search_alpha(usable, table, options);
  } else if (options.mode == EnsembleMode::discrete) {
    Index best = 0;
    (usable.colwise() - pseudo).colwise().squaredNorm().minCoeff(&best);
    sub_alpha = Eigen::VectorXd::Unit(usable.cols(), best);
  } else {
    sub_alpha = simplex_least_squares(usable, pseudo);
  }
  out.alpha = Eigen::VectorXd::Zero(k);
  for (std::size_t c = 0; c < ok.size(); ++c) out.alpha[ok[c]] = sub_alpha[static_cast<Index>(c)];
  out.ensemble_cv_value = cv_rule_value(out.cv_blips, out.alpha, table);

  auto blip = std::make_shared<EnsembleBlip>(out.candidates, out.alpha, d.dim());
  out.degenerate = (blip->evaluate(d.covariates()).array() == 0.0).all();
  out.rule = TreatmentRule::blip_backed(std::move(blip));
  return out;
}

std::vector<LearnerSpec> odtr_library_preset(LibraryConfig config, Index covariates) {
  std::vector<LearnerSpec> lib = q_library_preset(config, covariates);
  for (LearnerSpec& s : lib) s.link = Link::identity;
  return lib;
}

TreatmentRule oracle_true_rule() { return TreatmentRule::blip_backed(std::make_shared<TrueBlip>()); }

}  // namespace dtrval
