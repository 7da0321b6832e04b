#include <algorithm>
#include <numeric>

#include "busdensity/classifiers.hpp"
#include "busdensity/parallel.hpp"
#include "busdensity/random.hpp"

namespace busdensity::classifiers {

const TreeNode& DecisionTree::leaf_for(const FeatureVector& x) const {
  if (nodes.empty()) throw Error("untrained_model", "decision tree has no nodes");
  const TreeNode* node = &nodes.front();
  while (!node->is_leaf()) node = &nodes[x[node->feature] <= node->threshold ? node->left : node->right];
  return *node;
}

DensityDistribution DecisionTree::predict(const FeatureVector& x) const {
  const auto& leaf = leaf_for(x);
  double total = 0.0;
  for (double c : leaf.counts) total += c;
  DensityDistribution d;
  for (int k = 0; k < kNumDensity; ++k) d.p[k] = leaf.counts[k] / total;
  return d;
}

int DecisionTree::depth() const {
  if (nodes.empty()) return 0;
  std::vector<int> depth(nodes.size(), 0);
  int deepest = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    deepest = std::max(deepest, depth[i]);
    if (!nodes[i].is_leaf()) {
      depth[nodes[i].left] = depth[i] + 1;
      depth[nodes[i].right] = depth[i] + 1;
    }
  }
  return deepest;
}

namespace {

using Counts = std::array<double, kNumDensity>;

double gini_weighted(const Counts& c, double n) {
  if (n <= 0) return 0.0;
  double sq = 0.0;
  for (double v : c) sq += v * v;
  return n - sq / n;  // n * (1 - sum p^2)
}

struct SplitChoice {
  int feature = -1;
  double threshold = 0.0;
  double impurity = 0.0;
};

class TreeBuilder {
 public:
  TreeBuilder(const Dataset& data, const ForestConfig& cfg, std::uint64_t seed)
      : data_(data), cfg_(cfg), rng_(seed) {}

  DecisionTree build(std::vector<std::size_t> samples) {
    samples_ = std::move(samples);
    tree_.nodes.clear();
    grow(0, samples_.size(), 0);
    return std::move(tree_);
  }

 private:
  int grow(std::size_t begin, std::size_t end, int depth) {
    const int id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.emplace_back();
    Counts counts{};
    for (std::size_t i = begin; i < end; ++i) counts[index_of(data_.y[samples_[i]])] += 1.0;
    tree_.nodes[id].counts = counts;

    const auto n = static_cast<double>(end - begin);
    const bool pure = std::count_if(counts.begin(), counts.end(), [](double c) { return c > 0; }) <= 1;
    if (pure || end - begin < static_cast<std::size_t>(cfg_.min_samples_split) ||
        end - begin < 2 * static_cast<std::size_t>(cfg_.min_samples_leaf) ||
        (cfg_.max_depth && depth >= *cfg_.max_depth))
      return id;

    const SplitChoice split = best_split(begin, end, counts, n);
    if (split.feature < 0) return id;

    const auto mid_it = std::partition(
        samples_.begin() + static_cast<std::ptrdiff_t>(begin), samples_.begin() + static_cast<std::ptrdiff_t>(end),
        [&](std::size_t s) { return data_.X[s][split.feature] <= split.threshold; });
    const auto mid = static_cast<std::size_t>(mid_it - samples_.begin());

    tree_.nodes[id].feature = split.feature;
    tree_.nodes[id].threshold = split.threshold;
    const int left = grow(begin, mid, depth + 1);
    const int right = grow(mid, end, depth + 1);
    tree_.nodes[id].left = left;
    tree_.nodes[id].right = right;
    return id;
  }

  SplitChoice best_split(std::size_t begin, std::size_t end, const Counts& total, double n) {
    std::array<int, kNumBins> order;
    std::iota(order.begin(), order.end(), 0);
    rng_.shuffle(std::span<int>(order));

    SplitChoice best;
    best.impurity = gini_weighted(total, n);
    bool found = false;
    int evaluated = 0;
    const std::size_t min_leaf = static_cast<std::size_t>(cfg_.min_samples_leaf);
    std::vector<std::pair<double, int>> column(end - begin);

    for (int f : order) {
      if (evaluated >= cfg_.max_features) break;
      for (std::size_t i = begin; i < end; ++i)
        column[i - begin] = {data_.X[samples_[i]][f], index_of(data_.y[samples_[i]])};
      std::sort(column.begin(), column.end());
      if (column.front().first == column.back().first) continue;  // constant: not counted
      ++evaluated;

      Counts left{};
      for (std::size_t i = 0; i + 1 < column.size(); ++i) {
        left[column[i].second] += 1.0;
        if (column[i].first == column[i + 1].first) continue;
        const std::size_t nl = i + 1, nr = column.size() - nl;
        if (nl < min_leaf || nr < min_leaf) continue;
        Counts right;
        for (int k = 0; k < kNumDensity; ++k) right[k] = total[k] - left[k];
        const double impurity =
            gini_weighted(left, static_cast<double>(nl)) + gini_weighted(right, static_cast<double>(nr));
        if (!found || impurity < best.impurity) {
          found = true;
          best.feature = f;
          best.impurity = impurity;
          double thr = 0.5 * (column[i].first + column[i + 1].first);
          if (!(thr < column[i + 1].first)) thr = column[i].first;
          best.threshold = thr;
        }
      }
    }
    if (!found) best.feature = -1;
    return best;
  }

  const Dataset& data_;
  const ForestConfig& cfg_;
  Rng rng_;
  std::vector<std::size_t> samples_;
  DecisionTree tree_;
};

}  // namespace

DecisionTree grow_tree(const Dataset& data, std::span<const std::size_t> samples, const ForestConfig& cfg,
                       std::uint64_t seed) {
  if (samples.empty()) throw Error("empty_input", "cannot grow a tree on zero samples");
  TreeBuilder builder(data, cfg, seed);
  return builder.build(std::vector<std::size_t>(samples.begin(), samples.end()));
}

ForestModel train_forest(const Dataset& data, const ForestConfig& cfg) {
  data.validate();
  if (cfg.n_trees < 1 || cfg.min_samples_leaf < 1 || cfg.min_samples_split < 2 || cfg.max_features < 1 ||
      cfg.max_features > kNumBins || (cfg.max_depth && *cfg.max_depth < 0))
    throw Error("bad_config", "invalid forest hyperparameters");
  ForestModel model;
  model.config = cfg;
  model.training_digest = data.digest();
  model.trees.resize(static_cast<std::size_t>(cfg.n_trees));
  const std::size_t n = data.size();
  parallel_for(model.trees.size(), [&](std::size_t t) {
    const std::uint64_t seed = cfg.seed ^ static_cast<std::uint64_t>(t);
    Rng rng(seed);
    std::vector<std::size_t> samples(n);
    if (cfg.bootstrap) {
      for (auto& s : samples) s = rng.index(n);
    } else {
      std::iota(samples.begin(), samples.end(), 0);
    }
    model.trees[t] = grow_tree(data, samples, cfg, rng.next());
  });
  return model;
}

DensityDistribution predict_proba(const ForestModel& m, const FeatureVector& x) {
  if (m.trees.empty()) throw Error("untrained_model", "forest has no trees");
  DensityDistribution mean;
  for (const auto& tree : m.trees) {
    const auto d = tree.predict(x);
    for (int k = 0; k < kNumDensity; ++k) mean.p[k] += d.p[k];
  }
  for (double& v : mean.p) v /= static_cast<double>(m.trees.size());
  return mean;
}

}  // namespace busdensity::classifiers
