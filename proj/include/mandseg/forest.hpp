#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mandseg/error.hpp"

namespace mandseg {

struct ForestParams {
  std::size_t tree_count = 50;
  std::size_t max_depth = 12;
  std::size_t min_leaf = 5;
  /// Candidate features per split; 0 means ceil(sqrt(feature count)).
  std::size_t features_per_split = 0;
  bool bootstrap = true;

  void validate() const {
    if (tree_count == 0) throw ArgumentError("forest needs at least one tree");
    if (min_leaf == 0) throw ArgumentError("min_leaf must be positive");
  }
};

/// A node is a leaf when `feature` is negative; otherwise samples with
/// x[feature] <= threshold go left.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  std::int32_t left = -1;
  std::int32_t right = -1;
  double value = 0.0;
};

class RegressionTree {
 public:
  RegressionTree() = default;
  explicit RegressionTree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {
    if (nodes_.empty()) throw ArgumentError("tree without nodes");
  }

  /// A tree that always answers `value`.
  static RegressionTree constant(double value) { return RegressionTree({TreeNode{-1, 0, -1, -1, value}}); }

  [[nodiscard]] double predict(std::span<const double> x) const {
    std::size_t i = 0;
    while (nodes_[i].feature >= 0) {
      const TreeNode& n = nodes_[i];
      i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left
                                                                                          : n.right);
    }
    return nodes_[i].value;
  }

  [[nodiscard]] const std::vector<TreeNode>& nodes() const { return nodes_; }

  friend bool operator==(const RegressionTree& a, const RegressionTree& b) {
    return std::equal(a.nodes_.begin(), a.nodes_.end(), b.nodes_.begin(), b.nodes_.end(),
                      [](const TreeNode& p, const TreeNode& q) {
                        return p.feature == q.feature && p.threshold == q.threshold &&
                               p.left == q.left && p.right == q.right && p.value == q.value;
                      });
  }

 private:
  std::vector<TreeNode> nodes_;
};

struct Forest {
  ForestParams params;
  std::uint64_t rng_seed = 0;
  std::size_t feature_count = 0;
  std::vector<RegressionTree> trees;

  /// Mean of the per-tree predictions.
  [[nodiscard]] double predict(std::span<const double> x) const {
    if (trees.empty()) throw ArgumentError("forest has no trees");
    if (x.size() != feature_count)
      throw ArgumentError("feature length " + std::to_string(x.size()) + " does not match forest (" +
                          std::to_string(feature_count) + ")");
    double sum = 0.0;
    for (const auto& t : trees) sum += t.predict(x);
    return sum / double(trees.size());
  }

  friend bool operator==(const Forest& a, const Forest& b) {
    return a.feature_count == b.feature_count && a.rng_seed == b.rng_seed && a.trees == b.trees;
  }
};

namespace detail {

struct TreeBuilder {
  const std::vector<std::vector<double>>& x;
  std::span<const double> y;
  const ForestParams& params;
  std::size_t mtry;
  std::mt19937_64 rng;
  std::vector<TreeNode> nodes;

  static double mean_of(std::span<const double> y, const std::vector<std::size_t>& idx) {
    double s = 0.0;
    for (auto i : idx) s += y[i];
    return s / double(idx.size());
  }

  std::int32_t grow(std::vector<std::size_t> idx, std::size_t depth) {
    const auto node_id = static_cast<std::int32_t>(nodes.size());
    nodes.push_back(TreeNode{-1, 0.0, -1, -1, mean_of(y, idx)});

    const bool pure = std::all_of(idx.begin(), idx.end(), [&](std::size_t i) { return y[i] == y[idx[0]]; });
    if (pure || depth >= params.max_depth || idx.size() < 2 * params.min_leaf) return node_id;

    // Random candidate features, visited in ascending index order.
    const std::size_t d = x[0].size();
    std::vector<std::size_t> features(d);
    std::iota(features.begin(), features.end(), 0);
    for (std::size_t k = 0; k < mtry; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, d - 1);
      std::swap(features[k], features[pick(rng)]);
    }
    features.resize(mtry);
    std::sort(features.begin(), features.end());

    double total = 0.0;
    for (auto i : idx) total += y[i];
    const double n = double(idx.size());

    double best_gain = 0.0;
    int best_feature = -1;
    double best_threshold = 0.0;
    std::vector<std::size_t> order = idx;
    for (std::size_t f : features) {
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return x[a][f] < x[b][f]; });
      double left_sum = 0.0;
      for (std::size_t k = 0; k + 1 < order.size(); ++k) {
        left_sum += y[order[k]];
        const double lo = x[order[k]][f];
        const double hi = x[order[k + 1]][f];
        if (lo == hi) continue;
        const double nl = double(k + 1);
        const double nr = n - nl;
        if (nl < double(params.min_leaf) || nr < double(params.min_leaf)) continue;
        // SSE reduction = sum_l^2/n_l + sum_r^2/n_r - total^2/n
        const double right_sum = total - left_sum;
        const double gain = left_sum * left_sum / nl + right_sum * right_sum / nr - total * total / n;
        const double threshold = 0.5 * (lo + hi);
        if (gain > best_gain + 1e-12) {
          best_gain = gain;
          best_feature = static_cast<int>(f);
          best_threshold = threshold;
        }
      }
    }
    if (best_feature < 0) return node_id;

    std::vector<std::size_t> left_idx;
    std::vector<std::size_t> right_idx;
    for (auto i : idx)
      (x[i][static_cast<std::size_t>(best_feature)] <= best_threshold ? left_idx : right_idx).push_back(i);
    idx.clear();
    idx.shrink_to_fit();

    const std::int32_t l = grow(std::move(left_idx), depth + 1);
    const std::int32_t r = grow(std::move(right_idx), depth + 1);
    TreeNode& node = nodes[static_cast<std::size_t>(node_id)];
    node.feature = best_feature;
    node.threshold = best_threshold;
    node.left = l;
    node.right = r;
    return node_id;
  }
};

inline RegressionTree train_tree(const std::vector<std::vector<double>>& x, std::span<const double> y,
                                 const ForestParams& params, std::size_t mtry, std::uint64_t seed) {
  TreeBuilder builder{x, y, params, mtry, std::mt19937_64(seed), {}};
  std::vector<std::size_t> idx(x.size());
  if (params.bootstrap) {
    std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
    for (auto& i : idx) i = pick(builder.rng);
  } else {
    std::iota(idx.begin(), idx.end(), 0);
  }
  builder.grow(std::move(idx), 0);
  return RegressionTree(std::move(builder.nodes));
}

}  // namespace detail

/// Random-forest regression: bootstrap samples, random feature subsets per
/// split, variance-reduction splits, leaves holding the mean label. Tree i is
/// grown from seed rng_seed + i, so the result does not depend on `threads`.
[[nodiscard]] inline Forest train_forest(const std::vector<std::vector<double>>& features,
                                         std::span<const double> labels, const ForestParams& params,
                                         std::uint64_t rng_seed, unsigned threads = 1) {
  params.validate();
  if (features.empty()) throw ArgumentError("empty training set");
  if (features.size() != labels.size()) throw ArgumentError("features and labels differ in length");
  const std::size_t d = features[0].size();
  if (d == 0) throw ArgumentError("zero-length feature vectors");
  for (const auto& f : features)
    if (f.size() != d) throw ArgumentError("ragged feature vectors");

  const std::size_t mtry =
      params.features_per_split == 0
          ? static_cast<std::size_t>(std::ceil(std::sqrt(double(d))))
          : std::min(params.features_per_split, d);

  Forest forest{params, rng_seed, d, std::vector<RegressionTree>(params.tree_count)};
  const auto grow_range = [&](std::size_t first, std::size_t stride) {
    for (std::size_t t = first; t < params.tree_count; t += stride)
      forest.trees[t] = detail::train_tree(features, labels, params, mtry, rng_seed + t);
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(params.tree_count)));
  if (threads == 1) {
    grow_range(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < threads; ++w) pool.emplace_back(grow_range, w, threads);
  }
  return forest;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline constexpr const char* kForestFormat = "mandseg-forest";
inline constexpr int kForestVersion = 1;

[[nodiscard]] inline nlohmann::json forest_to_json(const Forest& f) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : f.trees) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : t.nodes()) {
      if (n.feature < 0)
        nodes.push_back({{"value", n.value}});
      else
        nodes.push_back({{"feature", n.feature},
                         {"threshold", n.threshold},
                         {"left", n.left},
                         {"right", n.right},
                         {"value", n.value}});
    }
    trees.push_back(std::move(nodes));
  }
  return {{"format", kForestFormat},
          {"version", kForestVersion},
          {"feature_count", f.feature_count},
          {"rng_seed", f.rng_seed},
          {"params",
           {{"tree_count", f.params.tree_count},
            {"max_depth", f.params.max_depth},
            {"min_leaf", f.params.min_leaf},
            {"features_per_split", f.params.features_per_split},
            {"bootstrap", f.params.bootstrap}}},
          {"trees", std::move(trees)}};
}

[[nodiscard]] inline Forest forest_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kForestFormat) throw IoError("not a forest file");
    if (j.at("version").get<int>() != kForestVersion)
      throw IoError("unsupported forest version " + std::to_string(j.at("version").get<int>()));
    Forest f;
    f.feature_count = j.at("feature_count").get<std::size_t>();
    f.rng_seed = j.at("rng_seed").get<std::uint64_t>();
    const auto& p = j.at("params");
    f.params.tree_count = p.at("tree_count").get<std::size_t>();
    f.params.max_depth = p.at("max_depth").get<std::size_t>();
    f.params.min_leaf = p.at("min_leaf").get<std::size_t>();
    f.params.features_per_split = p.at("features_per_split").get<std::size_t>();
    f.params.bootstrap = p.at("bootstrap").get<bool>();
    for (const auto& jt : j.at("trees")) {
      std::vector<TreeNode> nodes;
      for (const auto& jn : jt) {
        TreeNode n;
        n.value = jn.at("value").get<double>();
        if (jn.contains("feature")) {
          n.feature = jn.at("feature").get<int>();
          n.threshold = jn.at("threshold").get<double>();
          n.left = jn.at("left").get<std::int32_t>();
          n.right = jn.at("right").get<std::int32_t>();
        }
        nodes.push_back(n);
      }
      const auto count = static_cast<std::int32_t>(nodes.size());
      for (const auto& n : nodes)
        if (n.feature >= 0 && (n.feature >= static_cast<int>(f.feature_count) || n.left <= 0 ||
                               n.right <= 0 || n.left >= count || n.right >= count))
          throw IoError("forest file has an invalid node");
      f.trees.emplace_back(std::move(nodes));
    }
    if (f.trees.empty()) throw IoError("forest file has no trees");
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed forest file: ") + e.what());
  }
}

}  // namespace mandseg
