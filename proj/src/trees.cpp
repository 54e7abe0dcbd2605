// Bagged depth-limited regression trees.
//
// Bootstrap multiplicities are Poisson(1) draws keyed on a hash of each
// row's contents and the tree index, so the ensemble depends only on the
// weighted empirical distribution: duplicated rows receive identical draws.

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "dtrval/error.hpp"
#include "dtrval/rng.hpp"
#include "learners_internal.hpp"

namespace dtrval::detail {
namespace {

struct Node {
  Index feature = -1;  // -1 for leaves
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

using Tree = std::vector<Node>;

int poisson_one(double u) {
  // Inverse CDF of Poisson(1).
  double p = std::exp(-1.0);
  double cdf = p;
  int k = 0;
  while (u > cdf && k < 20) {
    ++k;
    p /= k;
    cdf += p;
  }
  return k;
}

std::uint64_t row_hash(const Eigen::MatrixXd& f, const Eigen::VectorXd& y, Index i) {
  std::uint64_t h = 0x51ed270b27b1a3c5ULL;
  for (Index c = 0; c < f.cols(); ++c) h = mix64(h ^ std::bit_cast<std::uint64_t>(f(i, c) + 0.0));
  return mix64(h ^ std::bit_cast<std::uint64_t>(y[i] + 0.0));
}

class TreeEnsembleFit final : public LearnerBase {
 public:
  TreeEnsembleFit(LearnerSpec spec, Index dim, bool with_a, std::vector<Tree> trees)
      : LearnerBase(std::move(spec), dim, with_a), trees_(std::move(trees)) {}

  json describe() const override {
    json j = FittedLearner::describe();
    j["trees_grown"] = trees_.size();
    return j;
  }

 protected:
  Eigen::VectorXd predict_impl(const Eigen::MatrixXd& w, const Eigen::VectorXd* a) const override {
    const Eigen::MatrixXd f = a ? feature_matrix(spec_, Design(w, *a)) : feature_matrix(spec_, Design(w));
    Eigen::VectorXd out = Eigen::VectorXd::Zero(f.rows());
    for (const Tree& tree : trees_) {
      for (Index i = 0; i < f.rows(); ++i) {
        int node = 0;
        while (tree[static_cast<std::size_t>(node)].feature >= 0) {
          const Node& nd = tree[static_cast<std::size_t>(node)];
          node = f(i, nd.feature) <= nd.threshold ? nd.left : nd.right;
        }
        out[i] += tree[static_cast<std::size_t>(node)].value;
      }
    }
    return out / static_cast<double>(trees_.size());
  }

 private:
  std::vector<Tree> trees_;
};

// Grows one tree level by level; sorted_rows[c] lists rows ordered by column c.
Tree grow_tree(const Eigen::MatrixXd& f, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
               const std::vector<std::vector<Index>>& sorted_rows, int depth, double min_leaf) {
  const Index n = f.rows();
  Tree tree(1);
  std::vector<int> node_of(static_cast<std::size_t>(n), 0);
  {
    double sw = 0.0;
    double sy = 0.0;
    for (Index i = 0; i < n; ++i) {
      sw += w[i];
      sy += w[i] * y[i];
    }
    tree[0].value = sy / sw;
  }
  std::vector<int> frontier{0};

  for (int level = 0; level < depth && !frontier.empty(); ++level) {
    const std::size_t nodes = tree.size();
    std::vector<double> tot_w(nodes, 0.0);
    std::vector<double> tot_s(nodes, 0.0);
    std::vector<char> active(nodes, 0);
    for (int nd : frontier) active[static_cast<std::size_t>(nd)] = 1;
    for (Index i = 0; i < n; ++i) {
      const auto nd = static_cast<std::size_t>(node_of[static_cast<std::size_t>(i)]);
      tot_w[nd] += w[i];
      tot_s[nd] += w[i] * y[i];
    }

    std::vector<double> best_gain(nodes, 1e-12);
    std::vector<Index> best_feature(nodes, -1);
    std::vector<double> best_threshold(nodes, 0.0);
    std::vector<double> left_w(nodes);
    std::vector<double> left_s(nodes);
    std::vector<double> last_x(nodes);
    std::vector<char> seen(nodes);

    for (Index c = 0; c < f.cols(); ++c) {
      std::fill(left_w.begin(), left_w.end(), 0.0);
      std::fill(left_s.begin(), left_s.end(), 0.0);
      std::fill(seen.begin(), seen.end(), 0);
      for (Index i : sorted_rows[static_cast<std::size_t>(c)]) {
        const auto nd = static_cast<std::size_t>(node_of[static_cast<std::size_t>(i)]);
        if (!active[nd] || w[i] == 0.0) continue;
        const double x = f(i, c);
        if (seen[nd] && x > last_x[nd]) {
          const double wl = left_w[nd];
          const double wr = tot_w[nd] - wl;
          if (wl >= min_leaf && wr >= min_leaf) {
            const double sl = left_s[nd];
            const double sr = tot_s[nd] - sl;
            const double gain = sl * sl / wl + sr * sr / wr - tot_s[nd] * tot_s[nd] / tot_w[nd];
            if (gain > best_gain[nd]) {
              best_gain[nd] = gain;
              best_feature[nd] = c;
              best_threshold[nd] = 0.5 * (last_x[nd] + x);
            }
          }
        }
        left_w[nd] += w[i];
        left_s[nd] += w[i] * y[i];
        last_x[nd] = x;
        seen[nd] = 1;
      }
    }

    std::vector<int> next;
    for (int nd : frontier) {
      const auto u = static_cast<std::size_t>(nd);
      if (best_feature[u] < 0) continue;
      const int l = static_cast<int>(tree.size());
      tree.push_back({});
      tree.push_back({});
      tree[u].feature = best_feature[u];
      tree[u].threshold = best_threshold[u];
      tree[u].left = l;
      tree[u].right = l + 1;
      next.push_back(l);
      next.push_back(l + 1);
    }
    // Route rows to the new children and compute leaf means.
    std::vector<double> cw(tree.size(), 0.0);
    std::vector<double> cs(tree.size(), 0.0);
    for (Index i = 0; i < n; ++i) {
      auto& nd = node_of[static_cast<std::size_t>(i)];
      const Node& parent = tree[static_cast<std::size_t>(nd)];
      if (parent.feature < 0) continue;
      nd = f(i, parent.feature) <= parent.threshold ? parent.left : parent.right;
      cw[static_cast<std::size_t>(nd)] += w[i];
      cs[static_cast<std::size_t>(nd)] += w[i] * y[i];
    }
    for (int nd : next) {
      const auto u = static_cast<std::size_t>(nd);
      tree[u].value = cs[u] / cw[u];
    }
    frontier = std::move(next);
  }
  return tree;
}

}  // namespace

std::shared_ptr<FittedLearner> fit_tree_ensemble(const LearnerSpec& spec, const Design& x,
                                                 const Eigen::VectorXd& y,
                                                 const Eigen::VectorXd& weights) {
  const Eigen::MatrixXd f = feature_matrix(spec, x);
  const Index n = f.rows();

  std::vector<std::vector<Index>> sorted_rows(static_cast<std::size_t>(f.cols()));
  for (Index c = 0; c < f.cols(); ++c) {
    auto& order = sorted_rows[static_cast<std::size_t>(c)];
    order.resize(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return f(a, c) < f(b, c); });
  }
  std::vector<std::uint64_t> hashes(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) hashes[static_cast<std::size_t>(i)] = row_hash(f, y, i);

  std::vector<Tree> trees;
  trees.reserve(static_cast<std::size_t>(spec.trees));
  Eigen::VectorXd bw(n);
  for (int t = 0; t < spec.trees; ++t) {
    const std::uint64_t tree_seed = derive_seed(spec.seed, static_cast<std::uint64_t>(t));
    for (Index i = 0; i < n; ++i) {
      const double u = hash_to_unit(mix64(hashes[static_cast<std::size_t>(i)] ^ tree_seed));
      bw[i] = weights[i] * poisson_one(u);
    }
    if (!(bw.sum() > 0.0)) continue;
    trees.push_back(grow_tree(f, y, bw, sorted_rows, spec.depth, spec.min_leaf));
  }
  if (trees.empty()) {
    // Every bootstrap draw was empty (tiny samples); fall back to a single
    // tree on the original weights.
    trees.push_back(grow_tree(f, y, weights, sorted_rows, spec.depth, spec.min_leaf));
  }
  return std::make_shared<TreeEnsembleFit>(spec, x.covariates->cols(), x.has_treatment(),
                                           std::move(trees));
}

}  // namespace dtrval::detail
