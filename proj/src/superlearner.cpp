#include "dtrval/superlearner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dtrval/error.hpp"
#include "dtrval/rng.hpp"

namespace dtrval {

std::string to_string(EnsembleMode mode) { return mode == EnsembleMode::discrete ? "discrete" : "convex"; }

EnsembleMode ensemble_mode_from_string(const std::string& s) {
  if (s == "discrete") return EnsembleMode::discrete;
  if (s == "convex") return EnsembleMode::convex;
  throw InvalidConfiguration("unknown ensemble mode '" + s + "' (expected discrete or convex)");
}

std::string to_string(LibraryConfig c) {
  switch (c) {
    case LibraryConfig::least: return "least";
    case LibraryConfig::moderate: return "moderate";
    case LibraryConfig::most: return "most";
  }
  return "?";
}

LibraryConfig library_config_from_string(const std::string& s) {
  if (s == "least" || s == "glm" || s == "glms") return LibraryConfig::least;
  if (s == "moderate") return LibraryConfig::moderate;
  if (s == "most" || s == "aggressive") return LibraryConfig::most;
  throw InvalidConfiguration("unknown library configuration '" + s + "' (expected least, moderate or most)");
}

std::vector<LearnerSpec> q_library_preset(LibraryConfig config, Index covariates) {
  std::vector<LearnerSpec> lib;
  for (Index j = 0; j < covariates; ++j) lib.push_back(LearnerSpec::univariate(j, Link::logit));
  if (config == LibraryConfig::least) return lib;
  lib.push_back(LearnerSpec::glm(Link::logit));
  lib.push_back(LearnerSpec::mean(Link::logit));
  lib.push_back(LearnerSpec::pairwise(Link::logit));
  lib.push_back(LearnerSpec::tree_ensemble(3, 20, 30, Link::logit));
  if (config == LibraryConfig::moderate) return lib;
  lib.push_back(LearnerSpec::nearest_neighbours(5, Link::logit));
  return lib;
}

json TreatmentModelSpec::to_json() const {
  if (kind == Kind::known) return {{"kind", "known"}, {"p", p}};
  return {{"kind", "fit_glm"}};
}

double mean_squared_error(const Eigen::VectorXd& y, const Eigen::VectorXd& prediction) {
  return (y - prediction).squaredNorm() / static_cast<double>(y.size());
}

Eigen::VectorXd project_to_simplex(const Eigen::VectorXd& v) {
  const Index k = v.size();
  std::vector<double> u(v.data(), v.data() + k);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumulative = 0.0;
  double theta = 0.0;
  for (Index j = 0; j < k; ++j) {
    cumulative += u[static_cast<std::size_t>(j)];
    const double t = (cumulative - 1.0) / static_cast<double>(j + 1);
    if (u[static_cast<std::size_t>(j)] - t > 0) theta = t;
  }
  Eigen::VectorXd out = (v.array() - theta).cwiseMax(0.0).matrix();
  out /= out.sum();
  return out;
}

Eigen::VectorXd simplex_least_squares(const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                                      const SimplexLsOptions& options) {
  const Index k = z.cols();
  if (k == 0) throw InvalidInput("simplex_least_squares: no columns");
  const double n = static_cast<double>(z.rows());
  const Eigen::MatrixXd gram = z.transpose() * z / n;
  const Eigen::VectorXd cross = z.transpose() * y / n;
  auto risk = [&](const Eigen::VectorXd& a) { return mean_squared_error(y, z * a); };

  Index best_vertex = 0;
  double best_vertex_risk = std::numeric_limits<double>::infinity();
  for (Index j = 0; j < k; ++j) {
    const double r = mean_squared_error(y, z.col(j));
    if (r < best_vertex_risk) {
      best_vertex_risk = r;
      best_vertex = j;
    }
  }
  Eigen::VectorXd alpha = Eigen::VectorXd::Unit(k, best_vertex);
  if (k == 1) return alpha;

  const double lipschitz = 2.0 * Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(gram, Eigen::EigenvaluesOnly)
                                     .eigenvalues()
                                     .maxCoeff();
  const double step = lipschitz > 0 ? 1.0 / lipschitz : 0.1;
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    const Eigen::VectorXd gradient = 2.0 * (gram * alpha - cross);
    const Eigen::VectorXd next = project_to_simplex(alpha - step * gradient);
    const double change = (next - alpha).cwiseAbs().maxCoeff();
    alpha = next;
    if (change < options.tolerance) break;
  }

  // Never return something worse than a vertex or the uniform mix.
  const Eigen::VectorXd uniform = Eigen::VectorXd::Constant(k, 1.0 / static_cast<double>(k));
  double r = risk(alpha);
  if (best_vertex_risk < r) {
    alpha = Eigen::VectorXd::Unit(k, best_vertex);
    r = best_vertex_risk;
  }
  if (risk(uniform) < r) alpha = uniform;
  return alpha;
}

// ---------------------------------------------------------------------------

EnsembleFit::EnsembleFit(std::vector<LearnerSpec> specs,
                         std::vector<std::shared_ptr<const FittedLearner>> members,
                         Eigen::VectorXd weights, Eigen::VectorXd cv_risks, EnsembleMode mode,
                         EnsembleTarget target, Index dim)
    : specs_(std::move(specs)),
      members_(std::move(members)),
      weights_(std::move(weights)),
      cv_risks_(std::move(cv_risks)),
      mode_(mode),
      target_(target),
      dim_(dim) {
  if (members_.size() != specs_.size() || weights_.size() != static_cast<Index>(specs_.size())) {
    throw ShapeError("ensemble members, specs and weights disagree");
  }
}

Eigen::VectorXd EnsembleFit::predict(const Design& x) const {
  if (x.covariates->cols() != dim_) {
    throw ShapeError("ensemble fitted on " + std::to_string(dim_) + " covariates, got " +
                     std::to_string(x.covariates->cols()));
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(x.rows());
  for (std::size_t j = 0; j < members_.size(); ++j) {
    const double a = weights_[static_cast<Index>(j)];
    if (a == 0.0) continue;
    out += a * members_[j]->predict(x);
  }
  return out;
}

json EnsembleFit::to_json() const {
  json members = json::array();
  for (std::size_t j = 0; j < specs_.size(); ++j) {
    const auto jj = static_cast<Index>(j);
    json m{{"learner", specs_[j].tag()},
           {"weight", weights_[jj]},
           {"cv_risk", std::isfinite(cv_risks_[jj]) ? json(cv_risks_[jj]) : json(nullptr)}};
    if (members_[j]) m["fit"] = members_[j]->describe();
    members.push_back(std::move(m));
  }
  return {{"mode", to_string(mode_)},
          {"target", target_ == EnsembleTarget::outcome ? "Q" : "g"},
          {"members", std::move(members)}};
}

Eigen::VectorXd predict_q(const EnsembleFit& e, int a, const Eigen::MatrixXd& w) {
  if (e.target() != EnsembleTarget::outcome) throw InvalidConfiguration("predict_q needs an outcome ensemble");
  const Eigen::VectorXd av = Eigen::VectorXd::Constant(w.rows(), static_cast<double>(a));
  return e.predict(Design(w, av)).cwiseMax(0.0).cwiseMin(1.0);
}

Eigen::VectorXd predict_g1(const EnsembleFit& e, const Eigen::MatrixXd& w) {
  if (e.target() != EnsembleTarget::treatment) throw InvalidConfiguration("predict_g1 needs a treatment ensemble");
  return e.predict(Design(w)).cwiseMax(0.0).cwiseMin(1.0);
}

namespace {

std::shared_ptr<const FittedLearner> try_fit(const LearnerSpec& spec, const Dataset& d,
                                             EnsembleTarget target) {
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(static_cast<Index>(d.n()));
  try {
    if (target == EnsembleTarget::outcome) {
      return fit(spec, Design(d.covariates(), d.treatment_real()), d.outcome(), ones);
    }
    return fit(spec, Design(d.covariates()), d.treatment_real(), ones);
  } catch (const Error&) {
    return nullptr;
  }
}

Eigen::VectorXd try_predict(const FittedLearner& f, const Dataset& d, EnsembleTarget target) {
  if (target == EnsembleTarget::outcome) return f.predict(Design(d.covariates(), d.treatment_real()));
  return f.predict(Design(d.covariates()));
}

}  // namespace

EnsembleFit fit_superlearner(const std::vector<LearnerSpec>& library, const Dataset& d,
                             EnsembleTarget target, const FoldScheme& folds, EnsembleMode mode) {
  if (library.empty()) throw InvalidConfiguration("SuperLearner library is empty");
  if (folds.n() != d.n()) throw ShapeError("fold scheme size differs from dataset size");
  if (target == EnsembleTarget::outcome &&
      ((d.outcome().array() < 0.0).any() || (d.outcome().array() > 1.0).any())) {
    throw InvalidInput("outcome SuperLearner needs outcomes scaled to [0,1]");
  }
  const Index n = static_cast<Index>(d.n());
  const auto k = static_cast<Index>(library.size());
  const Eigen::VectorXd& y = target == EnsembleTarget::outcome ? d.outcome() : d.treatment_real();

  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(n, k);
  std::vector<char> failed(library.size(), 0);
  for (int v = 0; v < folds.folds(); ++v) {
    const auto train_rows = folds.training_rows(v);
    const auto valid_rows = folds.validation_rows(v);
    if (valid_rows.empty()) continue;
    if (train_rows.empty()) throw InvalidConfiguration("a SuperLearner fold has an empty training set");
    const Dataset train = d.subset(train_rows);
    const Dataset valid = d.subset(valid_rows);
    for (Index j = 0; j < k; ++j) {
      if (failed[static_cast<std::size_t>(j)]) continue;
      auto f = try_fit(library[static_cast<std::size_t>(j)], train, target);
      if (!f) {
        failed[static_cast<std::size_t>(j)] = 1;
        continue;
      }
      const Eigen::VectorXd pred = try_predict(*f, valid, target);
      for (std::size_t r = 0; r < valid_rows.size(); ++r) {
        z(static_cast<Index>(valid_rows[r]), j) = pred[static_cast<Index>(r)];
      }
    }
  }

  // Refit on everything.
  std::vector<std::shared_ptr<const FittedLearner>> members(library.size());
  for (Index j = 0; j < k; ++j) {
    const auto u = static_cast<std::size_t>(j);
    if (failed[u]) continue;
    members[u] = try_fit(library[u], d, target);
    if (!members[u]) failed[u] = 1;
  }

  Eigen::VectorXd risks(k);
  std::vector<Index> ok;
  for (Index j = 0; j < k; ++j) {
    if (failed[static_cast<std::size_t>(j)]) {
      risks[j] = std::numeric_limits<double>::infinity();
    } else {
      risks[j] = mean_squared_error(y, z.col(j));
      ok.push_back(j);
    }
  }
  if (ok.empty()) throw InvalidInput("every SuperLearner member failed to fit");

  Eigen::VectorXd weights = Eigen::VectorXd::Zero(k);
  if (mode == EnsembleMode::discrete) {
    Index best = ok.front();
    for (Index j : ok) {
      if (risks[j] < risks[best]) best = j;
    }
    weights[best] = 1.0;
  } else {
    Eigen::MatrixXd zs(n, static_cast<Index>(ok.size()));
    for (std::size_t c = 0; c < ok.size(); ++c) zs.col(static_cast<Index>(c)) = z.col(ok[c]);
    const Eigen::VectorXd alpha = simplex_least_squares(zs, y);
    for (std::size_t c = 0; c < ok.size(); ++c) weights[ok[c]] = alpha[static_cast<Index>(c)];
  }
  for (Index j = 0; j < k; ++j) {
    if (weights[j] < 1e-12 && weights[j] != 0.0) weights[j] = 0.0;
  }
  weights /= weights.sum();

  return EnsembleFit(library, std::move(members), std::move(weights), std::move(risks), mode, target,
                     d.dim());
}

NuisanceFit fit_nuisance(const Dataset& d, const NuisanceOptions& options, Provenance provenance) {
  const std::size_t n = d.n();
  if (n < 2) throw InvalidInput("need at least two observations to fit nuisance parameters");
  const int v = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(options.inner_folds), n));
  const FoldScheme folds = make_folds(n, v, derive_seed(options.seed, "superlearner-folds"));
  auto q = std::make_shared<EnsembleOutcomeModel>(
      fit_superlearner(options.q_library, d, EnsembleTarget::outcome, folds, options.mode));

  std::shared_ptr<const PropensityModel> g;
  if (options.g.kind == TreatmentModelSpec::Kind::known) {
    g = std::make_shared<ConstantPropensity>(options.g.p);
  } else {
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(static_cast<Index>(n));
    g = std::make_shared<LearnerPropensityModel>(
        fit(LearnerSpec::glm(Link::logit), Design(d.covariates()), d.treatment_real(), ones));
  }
  return NuisanceFit(std::move(g), std::move(q), std::move(provenance), options.g_min);
}

}  // namespace dtrval
