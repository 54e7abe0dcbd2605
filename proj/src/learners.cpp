#include "dtrval/learners.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <queue>

#include "dtrval/error.hpp"
#include "learners_internal.hpp"

namespace dtrval {

double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

double bounded_logit(double p) {
  return logit(std::clamp(p, kPredictionFloor, 1.0 - kPredictionFloor));
}

namespace {

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

const char* family_name(LearnerFamily f) {
  switch (f) {
    case LearnerFamily::mean: return "mean";
    case LearnerFamily::glm_main_terms: return "glm";
    case LearnerFamily::glm_univariate: return "glm_univariate";
    case LearnerFamily::glm_pairwise: return "glm_pairwise";
    case LearnerFamily::knn: return "knn";
    case LearnerFamily::tree_ensemble: return "trees";
  }
  return "?";
}

std::string format_number(double v) {
  if (v == std::floor(v) && std::abs(v) < 1e15) return std::to_string(static_cast<long long>(v));
  std::string s = std::to_string(v);
  while (!s.empty() && s.back() == '0') s.pop_back();
  return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    parts.push_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

template <typename T>
T parse_field(std::string_view field, std::string_view tag) {
  T value{};
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw InvalidConfiguration("unknown learner tag '" + std::string(tag) + "'");
  }
  return value;
}

// ---------------------------------------------------------------------------

class MeanFit final : public detail::LearnerBase {
 public:
  MeanFit(LearnerSpec spec, Index dim, bool with_a, double value)
      : LearnerBase(std::move(spec), dim, with_a), value_(value) {}

  json describe() const override {
    json j = FittedLearner::describe();
    j["value"] = value_;
    return j;
  }

 protected:
  Eigen::VectorXd predict_impl(const Eigen::MatrixXd& w, const Eigen::VectorXd*) const override {
    return Eigen::VectorXd::Constant(w.rows(), value_);
  }

 private:
  double value_;
};

class GlmFit final : public detail::LearnerBase {
 public:
  GlmFit(LearnerSpec spec, Index dim, bool with_a, Eigen::VectorXd beta)
      : LearnerBase(std::move(spec), dim, with_a), beta_(std::move(beta)) {}

  json describe() const override {
    json j = FittedLearner::describe();
    j["coefficients"] = std::vector<double>(beta_.data(), beta_.data() + beta_.size());
    j["converged"] = converged_;
    j["iterations"] = iterations_;
    return j;
  }

 protected:
  Eigen::VectorXd predict_impl(const Eigen::MatrixXd& w, const Eigen::VectorXd* a) const override {
    const Eigen::MatrixXd basis = a ? glm_basis(spec_, Design(w, *a)) : glm_basis(spec_, Design(w));
    Eigen::VectorXd eta = basis * beta_;
    if (spec_.link == Link::identity) return eta;
    return eta.unaryExpr([](double e) {
      return std::clamp(logistic(e), kPredictionFloor, 1.0 - kPredictionFloor);
    });
  }

 private:
  Eigen::VectorXd beta_;
};

// Weighted k-nearest-neighbour average on standardized features.  The
// neighbourhood holds the nearest rows up to a total weight of k, the last
// row contributing fractionally.  When A is a feature the search is done
// within the query's treatment arm.
class KnnFit final : public detail::LearnerBase {
 public:
  KnnFit(LearnerSpec spec, Index dim, bool with_a, Eigen::MatrixXd features, Eigen::VectorXd arm,
         Eigen::VectorXd y, Eigen::VectorXd weights, Eigen::RowVectorXd center,
         Eigen::RowVectorXd scale)
      : LearnerBase(std::move(spec), dim, with_a),
        features_(std::move(features)),
        arm_(std::move(arm)),
        y_(std::move(y)),
        weights_(std::move(weights)),
        center_(std::move(center)),
        scale_(std::move(scale)) {}

  json describe() const override {
    json j = FittedLearner::describe();
    j["training_rows"] = y_.size();
    return j;
  }

 protected:
  Eigen::VectorXd predict_impl(const Eigen::MatrixXd& w, const Eigen::VectorXd* a) const override {
    const Eigen::MatrixXd raw = detail::feature_matrix(spec_, Design(w));
    const Eigen::MatrixXd q = (raw.rowwise() - center_).array().rowwise() / scale_.array();
    const Index n_train = features_.rows();
    const Index p = features_.cols();
    Eigen::VectorXd out(q.rows());

    struct Neighbour {
      double dist;
      Index row;
      bool operator<(const Neighbour& o) const {
        return dist < o.dist || (dist == o.dist && row < o.row);
      }
    };
    std::vector<Neighbour> heap;
    heap.reserve(static_cast<std::size_t>(spec_.k) + 8);
    for (Index i = 0; i < q.rows(); ++i) {
      heap.clear();
      double mass = 0.0;
      for (Index r = 0; r < n_train; ++r) {
        if (a && arm_[r] != (*a)[i]) continue;
        double d = 0.0;
        for (Index c = 0; c < p; ++c) {
          const double diff = features_(r, c) - q(i, c);
          d += diff * diff;
        }
        if (mass >= spec_.k && !heap.empty() && !(Neighbour{d, r} < heap.front())) continue;
        heap.push_back({d, r});
        std::push_heap(heap.begin(), heap.end());
        mass += weights_[r];
        while (heap.size() > 1 && mass - weights_[heap.front().row] >= spec_.k) {
          mass -= weights_[heap.front().row];
          std::pop_heap(heap.begin(), heap.end());
          heap.pop_back();
        }
      }
      if (heap.empty()) {
        // No training row in this arm: fall back to the overall weighted mean.
        out[i] = weights_.dot(y_) / weights_.sum();
        continue;
      }
      double num = 0.0;
      double den = 0.0;
      const Index farthest = heap.front().row;
      for (const auto& nb : heap) {
        double wt = weights_[nb.row];
        if (nb.row == farthest && mass > spec_.k) wt -= mass - spec_.k;
        num += wt * y_[nb.row];
        den += wt;
      }
      out[i] = num / den;
    }
    return out;
  }

 private:
  Eigen::MatrixXd features_;  // standardized covariates (no A column)
  Eigen::VectorXd arm_;
  Eigen::VectorXd y_;
  Eigen::VectorXd weights_;
  Eigen::RowVectorXd center_;
  Eigen::RowVectorXd scale_;
};

}  // namespace

// ---------------------------------------------------------------------------

LearnerSpec LearnerSpec::mean(Link link) {
  LearnerSpec s;
  s.family = LearnerFamily::mean;
  s.link = link;
  return s;
}

LearnerSpec LearnerSpec::glm(Link link) {
  LearnerSpec s;
  s.family = LearnerFamily::glm_main_terms;
  s.link = link;
  return s;
}

LearnerSpec LearnerSpec::univariate(Index column, Link link) {
  LearnerSpec s;
  s.family = LearnerFamily::glm_univariate;
  s.column = column;
  s.link = link;
  return s;
}

LearnerSpec LearnerSpec::pairwise(Link link) {
  LearnerSpec s;
  s.family = LearnerFamily::glm_pairwise;
  s.link = link;
  return s;
}

LearnerSpec LearnerSpec::nearest_neighbours(double k, Link link) {
  LearnerSpec s;
  s.family = LearnerFamily::knn;
  s.k = k;
  s.link = link;
  return s;
}

LearnerSpec LearnerSpec::tree_ensemble(int depth, double min_leaf, int trees, Link link) {
  LearnerSpec s;
  s.family = LearnerFamily::tree_ensemble;
  s.depth = depth;
  s.min_leaf = min_leaf;
  s.trees = trees;
  s.link = link;
  return s;
}

std::string LearnerSpec::tag() const {
  std::string t = family_name(family);
  switch (family) {
    case LearnerFamily::glm_univariate:
      t += ":" + std::to_string(column);
      break;
    case LearnerFamily::knn:
      t += ":" + format_number(k);
      break;
    case LearnerFamily::tree_ensemble:
      t += ":" + std::to_string(depth) + ":" + format_number(min_leaf) + ":" + std::to_string(trees);
      break;
    default:
      break;
  }
  if (!feature_mask.empty()) {
    t += "@";
    for (std::size_t i = 0; i < feature_mask.size(); ++i) {
      if (i) t += ",";
      t += std::to_string(feature_mask[i]);
    }
  }
  return t;
}

LearnerSpec LearnerSpec::parse(std::string_view tag, Link link) {
  std::string_view body = tag;
  std::vector<Index> mask;
  if (const auto at = tag.find('@'); at != std::string_view::npos) {
    body = tag.substr(0, at);
    for (auto part : split(tag.substr(at + 1), ',')) mask.push_back(parse_field<Index>(part, tag));
  }
  const auto parts = split(body, ':');
  const std::string_view name = parts.front();
  LearnerSpec spec;
  auto expect_args = [&](std::size_t lo, std::size_t hi) {
    if (parts.size() - 1 < lo || parts.size() - 1 > hi) {
      throw InvalidConfiguration("unknown learner tag '" + std::string(tag) + "'");
    }
  };
  if (name == "mean") {
    expect_args(0, 0);
    spec = mean(link);
  } else if (name == "glm") {
    expect_args(0, 0);
    spec = glm(link);
  } else if (name == "glm_univariate") {
    expect_args(1, 1);
    spec = univariate(parse_field<Index>(parts[1], tag), link);
    if (spec.column < 0) throw InvalidConfiguration("unknown learner tag '" + std::string(tag) + "'");
  } else if (name == "glm_pairwise" || name == "glm_interaction") {
    expect_args(0, 0);
    spec = pairwise(link);
  } else if (name == "knn") {
    expect_args(0, 1);
    spec = nearest_neighbours(parts.size() > 1 ? parse_field<double>(parts[1], tag) : 5.0, link);
    if (!(spec.k > 0)) throw InvalidConfiguration("knn needs k > 0 in tag '" + std::string(tag) + "'");
  } else if (name == "trees") {
    expect_args(0, 3);
    spec = tree_ensemble(3, 20, 30, link);
    if (parts.size() > 1) spec.depth = parse_field<int>(parts[1], tag);
    if (parts.size() > 2) spec.min_leaf = parse_field<double>(parts[2], tag);
    if (parts.size() > 3) spec.trees = parse_field<int>(parts[3], tag);
    if (spec.depth < 1 || spec.trees < 1 || !(spec.min_leaf > 0)) {
      throw InvalidConfiguration("invalid tree parameters in tag '" + std::string(tag) + "'");
    }
  } else {
    throw InvalidConfiguration("unknown learner tag '" + std::string(tag) + "'");
  }
  spec.feature_mask = std::move(mask);
  return spec;
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd detail::feature_matrix(const LearnerSpec& spec, const Design& x) {
  const Eigen::MatrixXd& w = *x.covariates;
  const Index offset = x.has_treatment() ? 1 : 0;
  const Index p = spec.feature_mask.empty() ? w.cols() : static_cast<Index>(spec.feature_mask.size());
  Eigen::MatrixXd f(w.rows(), p + offset);
  if (offset) f.col(0) = *x.treatment;
  for (Index j = 0; j < p; ++j) {
    const Index src = spec.feature_mask.empty() ? j : spec.feature_mask[static_cast<std::size_t>(j)];
    if (src < 0 || src >= w.cols()) {
      throw ShapeError("feature mask column " + std::to_string(src) + " out of range");
    }
    f.col(j + offset) = w.col(src);
  }
  return f;
}

Eigen::MatrixXd glm_basis(const LearnerSpec& spec, const Design& x) {
  const Eigen::MatrixXd f = detail::feature_matrix(spec, x);
  const Index n = f.rows();
  const bool with_a = x.has_treatment();
  switch (spec.family) {
    case LearnerFamily::glm_main_terms: {
      Eigen::MatrixXd b(n, f.cols() + 1);
      b.col(0).setOnes();
      b.rightCols(f.cols()) = f;
      return b;
    }
    case LearnerFamily::glm_univariate: {
      const Index wcols = f.cols() - (with_a ? 1 : 0);
      if (spec.column >= wcols) {
        throw ShapeError("glm_univariate column " + std::to_string(spec.column) +
                         " exceeds covariate dimension " + std::to_string(wcols));
      }
      const Eigen::VectorXd wj = f.col(spec.column + (with_a ? 1 : 0));
      if (!with_a) {
        Eigen::MatrixXd b(n, 2);
        b.col(0).setOnes();
        b.col(1) = wj;
        return b;
      }
      Eigen::MatrixXd b(n, 4);
      b.col(0).setOnes();
      b.col(1) = f.col(0);
      b.col(2) = wj;
      b.col(3) = f.col(0).cwiseProduct(wj);
      return b;
    }
    case LearnerFamily::glm_pairwise: {
      const Index p = f.cols();
      Eigen::MatrixXd b(n, 1 + p + p * (p - 1) / 2);
      b.col(0).setOnes();
      b.middleCols(1, p) = f;
      Index c = 1 + p;
      for (Index i = 0; i < p; ++i) {
        for (Index j = i + 1; j < p; ++j) b.col(c++) = f.col(i).cwiseProduct(f.col(j));
      }
      return b;
    }
    default:
      throw InvalidConfiguration(std::string("learner family '") + family_name(spec.family) +
                                 "' has no GLM basis");
  }
}

double weighted_log_likelihood(const Eigen::MatrixXd& x, const Eigen::VectorXd& beta,
                               const Eigen::VectorXd& y, const Eigen::VectorXd& weights) {
  const Eigen::VectorXd eta = x * beta;
  double ll = 0.0;
  for (Index i = 0; i < eta.size(); ++i) ll += weights[i] * (y[i] * eta[i] - softplus(eta[i]));
  return ll;
}

IrlsResult fit_logistic_irls(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                             const Eigen::VectorXd& weights, const IrlsOptions& options) {
  const Index p = x.cols();
  IrlsResult result;
  result.coefficients = Eigen::VectorXd::Zero(p);
  const double ybar = weights.dot(y) / weights.sum();
  // Start from the intercept-only fit when the first column is constant.
  if (p > 0 && (x.col(0).array() == 1.0).all()) {
    result.coefficients[0] = bounded_logit(ybar);
  }
  double ll = weighted_log_likelihood(x, result.coefficients, y, weights);
  result.log_likelihood.push_back(ll);

  Eigen::VectorXd beta = result.coefficients;
  for (int iter = 1; iter <= options.max_iterations; ++iter) {
    result.iterations = iter;
    const Eigen::VectorXd eta = x * beta;
    Eigen::VectorXd mu(eta.size());
    Eigen::VectorXd sw(eta.size());
    for (Index i = 0; i < eta.size(); ++i) {
      mu[i] = logistic(eta[i]);
      sw[i] = std::sqrt(weights[i] * std::max(mu[i] * (1.0 - mu[i]), 1e-12));
    }
    // Newton step: (X'WX) delta = X' w (y - mu), via QR of sqrt(W) X.
    const Eigen::MatrixXd xw = sw.asDiagonal() * x;
    Eigen::VectorXd rhs(eta.size());
    for (Index i = 0; i < eta.size(); ++i) {
      rhs[i] = sw[i] > 0 ? weights[i] * (y[i] - mu[i]) / sw[i] : 0.0;
    }
    const Eigen::VectorXd delta = xw.colPivHouseholderQr().solve(rhs);
    if (!delta.allFinite()) break;

    double step = 1.0;
    Eigen::VectorXd candidate;
    double ll_new = -std::numeric_limits<double>::infinity();
    bool capped = false;
    for (int halving = 0; halving < 40; ++halving) {
      candidate = beta + step * delta;
      capped = (candidate.array().abs() > options.coefficient_cap).any();
      if (capped) {
        candidate = candidate.cwiseMax(-options.coefficient_cap).cwiseMin(options.coefficient_cap);
      }
      ll_new = weighted_log_likelihood(x, candidate, y, weights);
      if (ll_new >= ll - 1e-12 * (std::abs(ll) + 1.0)) break;
      step *= 0.5;
    }
    if (!(ll_new >= ll - 1e-12 * (std::abs(ll) + 1.0))) break;  // no ascent possible

    const double change = std::abs(ll_new - ll) / (std::abs(ll_new) + 0.1);
    const double max_delta = (candidate - beta).cwiseAbs().maxCoeff();
    beta = candidate;
    ll = std::max(ll, ll_new);
    result.coefficients = beta;
    result.log_likelihood.push_back(ll_new);
    if (capped) {
      result.converged = false;
      return result;
    }
    if (change < options.tolerance || max_delta < options.tolerance) {
      // Fitted probabilities of numerically 0 or 1 mean separation, not an MLE.
      const Eigen::ArrayXd fitted = (x * beta).array().abs();
      bool separated = false;
      for (Index i = 0; i < fitted.size(); ++i) separated = separated || (weights[i] > 0 && fitted[i] > 23.0);
      result.converged = !separated;
      return result;
    }
  }
  result.coefficients = beta;
  return result;
}

// ---------------------------------------------------------------------------

Eigen::VectorXd FittedLearner::predict(const Design& x) const {
  if (x.covariates->cols() != dim_) {
    throw ShapeError(spec_.tag() + ": fitted on " + std::to_string(dim_) + " covariates, got " +
                     std::to_string(x.covariates->cols()));
  }
  if (x.has_treatment() != with_treatment_) {
    throw ShapeError(spec_.tag() + ": treatment column presence differs from the fit");
  }
  if (x.has_treatment() && x.treatment->size() != x.rows()) {
    throw ShapeError("treatment column length differs from covariate rows");
  }
  Eigen::VectorXd out = predict_impl(*x.covariates, x.treatment);
  if (spec_.link == Link::logit) out = out.cwiseMax(0.0).cwiseMin(1.0);
  return out;
}

json FittedLearner::describe() const { return {{"learner", spec_.tag()}}; }

std::shared_ptr<const FittedLearner> fit(const LearnerSpec& spec, const Design& x,
                                         const Eigen::VectorXd& y, const Eigen::VectorXd& weights) {
  const Index n = x.rows();
  if (y.size() != n || weights.size() != n) {
    throw ShapeError("fit: design, outcome and weights disagree in length");
  }
  if (x.has_treatment() && x.treatment->size() != n) throw ShapeError("fit: treatment column length");
  if (n < 1) throw InvalidInput("fit: no observations");
  if ((weights.array() < 0.0).any() || !weights.allFinite()) {
    throw InvalidInput("fit: weights must be finite and non-negative");
  }
  if (!y.allFinite()) throw InvalidInput("fit: outcome contains non-finite values");
  if (spec.link == Link::logit && ((y.array() < 0.0).any() || (y.array() > 1.0).any())) {
    throw InvalidInput("fit: logit-link learners need an outcome in [0,1]");
  }

  // Drop zero-weight rows up front.
  std::vector<Index> keep;
  keep.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    if (weights[i] > 0.0) keep.push_back(i);
  }
  if (keep.empty()) throw InvalidInput("fit: all weights are zero");
  const Index m = static_cast<Index>(keep.size());
  Eigen::MatrixXd w(m, x.covariates->cols());
  Eigen::VectorXd a(x.has_treatment() ? m : 0);
  Eigen::VectorXd yy(m);
  Eigen::VectorXd ww(m);
  for (Index r = 0; r < m; ++r) {
    const Index i = keep[static_cast<std::size_t>(r)];
    w.row(r) = x.covariates->row(i);
    if (x.has_treatment()) a[r] = (*x.treatment)[i];
    yy[r] = y[i];
    ww[r] = weights[i];
  }
  const Design dx = x.has_treatment() ? Design(w, a) : Design(w);
  const Index dim = x.covariates->cols();
  const bool with_a = x.has_treatment();

  switch (spec.family) {
    case LearnerFamily::mean:
      return std::make_shared<MeanFit>(spec, dim, with_a, ww.dot(yy) / ww.sum());

    case LearnerFamily::glm_main_terms:
    case LearnerFamily::glm_univariate:
    case LearnerFamily::glm_pairwise: {
      const Eigen::MatrixXd basis = glm_basis(spec, dx);
      if (spec.link == Link::identity) {
        const Eigen::VectorXd sw = ww.cwiseSqrt();
        Eigen::VectorXd beta = (sw.asDiagonal() * basis).colPivHouseholderQr().solve(sw.cwiseProduct(yy));
        auto f = std::make_shared<GlmFit>(spec, dim, with_a, std::move(beta));
        f->set_fit_status(true, 1);
        return f;
      }
      IrlsResult r = fit_logistic_irls(basis, yy, ww);
      auto f = std::make_shared<GlmFit>(spec, dim, with_a, std::move(r.coefficients));
      f->set_fit_status(r.converged, r.iterations);
      return f;
    }

    case LearnerFamily::knn: {
      const Eigen::MatrixXd raw = detail::feature_matrix(spec, Design(w));
      const double total = ww.sum();
      Eigen::RowVectorXd center = (ww.transpose() * raw) / total;
      Eigen::RowVectorXd scale(raw.cols());
      for (Index c = 0; c < raw.cols(); ++c) {
        const double var = ww.dot((raw.col(c).array() - center[c]).square().matrix()) / total;
        scale[c] = var > 1e-24 ? std::sqrt(var) : 1.0;
      }
      Eigen::MatrixXd standardized = (raw.rowwise() - center).array().rowwise() / scale.array();
      return std::make_shared<KnnFit>(spec, dim, with_a, std::move(standardized),
                                      with_a ? a : Eigen::VectorXd::Zero(m), yy, ww,
                                      std::move(center), std::move(scale));
    }

    case LearnerFamily::tree_ensemble:
      return detail::fit_tree_ensemble(spec, dx, yy, ww);
  }
  throw InvalidConfiguration("unsupported learner family");
}

// ---------------------------------------------------------------------------

FluctuationResult fluctuation_fit(const Eigen::VectorXd& offset_logits, const Eigen::VectorXd& y,
                                  const Eigen::VectorXd& weights) {
  const Index n = y.size();
  if (offset_logits.size() != n || weights.size() != n) {
    throw ShapeError("fluctuation_fit: offsets, outcome and weights disagree in length");
  }
  if ((weights.array() < 0.0).any()) throw InvalidInput("fluctuation_fit: negative weight");
  const double total = weights.sum();
  if (!(total > 0.0)) throw InvalidInput("fluctuation_fit: all weights are zero");

  const double sum_wy = weights.dot(y);
  const double sum_w1y = total - sum_wy;
  if (sum_wy <= 0.0) return {-kEpsilonMax, true, 0};
  if (sum_w1y <= 0.0) return {kEpsilonMax, true, 0};

  auto score = [&](double eps, double* info) {
    double s = 0.0;
    double h = 0.0;
    for (Index i = 0; i < n; ++i) {
      if (weights[i] == 0.0) continue;
      const double mu = logistic(offset_logits[i] + eps);
      s += weights[i] * (y[i] - mu);
      h += weights[i] * mu * (1.0 - mu);
    }
    if (info) *info = h;
    return s;
  };

  const double tol = 1e-12 * total;
  double info = 0.0;
  double s = score(0.0, &info);
  if (std::abs(s) <= tol) return {0.0, false, 0};
  if (score(-kEpsilonMax, nullptr) < 0.0) return {-kEpsilonMax, true, 0};
  if (score(kEpsilonMax, nullptr) > 0.0) return {kEpsilonMax, true, 0};

  // Score is decreasing in eps: keep a bracket [lo, hi] with s(lo) > 0 > s(hi).
  double lo = -kEpsilonMax;
  double hi = kEpsilonMax;
  double eps = 0.0;
  int iter = 0;
  for (; iter < 200; ++iter) {
    if (s > 0) lo = eps; else hi = eps;
    double next = info > 0 ? eps + s / info : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    eps = next;
    s = score(eps, &info);
    if (std::abs(s) <= tol || hi - lo < 1e-15) break;
  }
  return {eps, false, iter + 1};
}

}  // namespace dtrval
