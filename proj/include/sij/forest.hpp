#pragma once
// Breiman-style random forest built from scratch: bootstrap sampling, greedy
// Gini splits over a per-node feature subset, class-count leaves. Training is
// deterministic for a fixed seed; per-tree RNG streams are derived from
// (seed, tree index) so parallel and serial builds produce bitwise-identical
// models.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sij/errors.hpp"
#include "sij/parallel.hpp"
#include "sij/rng.hpp"

namespace sij {

struct ForestParams {
  int n_trees = 500;
  int max_depth = 4;           // split levels: root = depth 0, leaves at depth <= max_depth
  int features_per_split = 0;  // 0 = floor(sqrt(n_features)), else explicit count
  int min_samples_leaf = 1;
  std::uint64_t seed = 0;
};

struct TreeNode {
  int feature = -1;  // -1 = leaf
  double threshold = 0.0;
  std::int32_t left = -1, right = -1;
  std::vector<std::int64_t> counts;  // leaf class histogram
};

struct Tree {
  std::vector<TreeNode> nodes;  // root at index 0
};

struct Forest {
  ForestParams params;
  int n_classes = 0;
  int n_features = 0;
  std::vector<Tree> trees;
};

namespace detail {

inline double gini(const std::vector<std::int64_t>& counts, std::int64_t total) {
  if (total == 0) return 0.0;
  double g = 1.0;
  for (const auto c : counts) {
    const double p = static_cast<double>(c) / static_cast<double>(total);
    g -= p * p;
  }
  return g;
}

struct TreeBuilder {
  const std::vector<float>& X;  // row-major n_rows x n_features
  int n_features;
  const std::vector<int>& y;
  int n_classes;
  const ForestParams& params;
  int k_features;
  Rng rng;
  Tree tree;

  float value(std::size_t row, int f) const {
    return X[row * static_cast<std::size_t>(n_features) + static_cast<std::size_t>(f)];
  }

  int build(std::vector<std::size_t>& samples, int depth) {
    std::vector<std::int64_t> counts(static_cast<std::size_t>(n_classes), 0);
    for (const auto s : samples) ++counts[static_cast<std::size_t>(y[s])];
    const auto total = static_cast<std::int64_t>(samples.size());
    const bool pure =
        std::count_if(counts.begin(), counts.end(), [](auto c) { return c > 0; }) <= 1;

    const int node_index = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();

    bool split_found = false;
    int best_feature = -1;
    double best_threshold = 0.0;
    double best_impurity = 0.0;
    if (!pure && depth < params.max_depth &&
        total >= 2 * static_cast<std::int64_t>(params.min_samples_leaf)) {
      auto feats = rng.sample_without_replacement(static_cast<std::size_t>(n_features),
                                                  static_cast<std::size_t>(k_features));
      // Ascending feature order plus ascending threshold sweeps make the
      // first strict improvement the tie-break winner (lowest feature index,
      // then lowest threshold).
      std::sort(feats.begin(), feats.end());
      std::vector<std::pair<float, int>> col(samples.size());
      std::vector<std::int64_t> left_counts(static_cast<std::size_t>(n_classes));
      for (const auto fu : feats) {
        const int f = static_cast<int>(fu);
        for (std::size_t i = 0; i < samples.size(); ++i)
          col[i] = {value(samples[i], f), y[samples[i]]};
        std::sort(col.begin(), col.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        std::fill(left_counts.begin(), left_counts.end(), 0);
        std::int64_t n_left = 0;
        for (std::size_t i = 0; i + 1 < col.size(); ++i) {
          ++left_counts[static_cast<std::size_t>(col[i].second)];
          ++n_left;
          if (col[i].first == col[i + 1].first) continue;
          const std::int64_t n_right = total - n_left;
          if (n_left < params.min_samples_leaf || n_right < params.min_samples_leaf)
            continue;
          double g_left = 1.0, g_right = 1.0;
          for (int c = 0; c < n_classes; ++c) {
            const double pl = static_cast<double>(left_counts[c]) / static_cast<double>(n_left);
            const double pr = static_cast<double>(counts[c] - left_counts[c]) /
                              static_cast<double>(n_right);
            g_left -= pl * pl;
            g_right -= pr * pr;
          }
          const double impurity = (static_cast<double>(n_left) * g_left +
                                   static_cast<double>(n_right) * g_right) /
                                  static_cast<double>(total);
          if (!split_found || impurity < best_impurity) {
            split_found = true;
            best_impurity = impurity;
            best_feature = f;
            best_threshold = static_cast<double>(col[i].first) +
                             (static_cast<double>(col[i + 1].first) -
                              static_cast<double>(col[i].first)) /
                                 2.0;
          }
        }
      }
    }

    if (!split_found) {
      tree.nodes[node_index].counts = std::move(counts);
      return node_index;
    }

    std::vector<std::size_t> left, right;
    for (const auto s : samples) {
      if (value(s, best_feature) <= best_threshold)
        left.push_back(s);
      else
        right.push_back(s);
    }
    samples.clear();
    samples.shrink_to_fit();

    tree.nodes[node_index].feature = best_feature;
    tree.nodes[node_index].threshold = best_threshold;
    const int l = build(left, depth + 1);
    tree.nodes[node_index].left = l;
    const int r = build(right, depth + 1);
    tree.nodes[node_index].right = r;
    return node_index;
  }
};

}  // namespace detail

inline Forest train_forest(const std::vector<std::vector<float>>& X,
                           const std::vector<int>& y, const ForestParams& params) {
  if (X.empty() || y.empty()) throw InvalidArgument("train_forest: empty data");
  if (X.size() != y.size()) throw InvalidArgument("train_forest: |X| != |y|");
  if (X.size() < 2) throw InvalidArgument("train_forest: need at least two samples");
  const int n_features = static_cast<int>(X[0].size());
  if (n_features < 1) throw InvalidArgument("train_forest: zero-dimensional features");
  for (const auto& row : X)
    if (static_cast<int>(row.size()) != n_features)
      throw InvalidArgument("train_forest: ragged feature rows");
  if (params.n_trees < 1 || params.max_depth < 1 || params.min_samples_leaf < 1)
    throw InvalidArgument("train_forest: params must be positive");
  if (params.features_per_split > n_features)
    throw InvalidArgument("train_forest: features_per_split exceeds feature dimension");

  int n_classes = 0;
  for (const auto label : y) {
    if (label < 0) throw InvalidArgument("train_forest: negative class label");
    n_classes = std::max(n_classes, label + 1);
  }

  const int k_features =
      params.features_per_split > 0
          ? params.features_per_split
          : std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(n_features)))));

  std::vector<float> flat(X.size() * static_cast<std::size_t>(n_features));
  for (std::size_t i = 0; i < X.size(); ++i)
    std::copy(X[i].begin(), X[i].end(), flat.begin() + i * static_cast<std::size_t>(n_features));

  Forest forest;
  forest.params = params;
  forest.n_classes = n_classes;
  forest.n_features = n_features;
  forest.trees.resize(static_cast<std::size_t>(params.n_trees));

  const std::size_t n = X.size();
  parallel_for(0, forest.trees.size(), [&](std::size_t t) {
    detail::TreeBuilder builder{flat, n_features, y, n_classes, params, k_features,
                                Rng(params.seed, t), Tree{}};
    std::vector<std::size_t> bootstrap(n);
    for (std::size_t i = 0; i < n; ++i)
      bootstrap[i] = static_cast<std::size_t>(builder.rng.uniform_int(n));
    builder.build(bootstrap, 0);
    forest.trees[t] = std::move(builder.tree);
  });
  return forest;
}

inline std::vector<double> forest_predict_proba(const Forest& forest,
                                                std::span<const float> x) {
  if (static_cast<int>(x.size()) != forest.n_features)
    throw InvalidArgument("forest_predict_proba: feature dimension mismatch");
  std::vector<double> probs(static_cast<std::size_t>(forest.n_classes), 0.0);
  for (const auto& tree : forest.trees) {
    int node = 0;
    while (tree.nodes[node].feature >= 0) {
      const auto& nd = tree.nodes[node];
      node = x[static_cast<std::size_t>(nd.feature)] <= nd.threshold ? nd.left : nd.right;
    }
    const auto& counts = tree.nodes[node].counts;
    std::int64_t total = 0;
    for (const auto c : counts) total += c;
    for (std::size_t c = 0; c < counts.size(); ++c)
      probs[c] += static_cast<double>(counts[c]) / static_cast<double>(total);
  }
  for (auto& p : probs) p /= static_cast<double>(forest.trees.size());
  return probs;
}

// Argmax class with ties broken toward the lower (healthier) index.
inline int forest_predict(const Forest& forest, std::span<const float> x) {
  const auto probs = forest_predict_proba(forest, x);
  return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

// ---------------------------------------------------------------------------
// Serialization: versioned JSON with nested split/leaf records.

namespace detail {

inline nlohmann::ordered_json node_to_json(const Tree& tree, int index) {
  const auto& nd = tree.nodes[static_cast<std::size_t>(index)];
  nlohmann::ordered_json j;
  if (nd.feature < 0) {
    j["c"] = nd.counts;
  } else {
    j["f"] = nd.feature;
    j["t"] = nd.threshold;
    j["l"] = node_to_json(tree, nd.left);
    j["r"] = node_to_json(tree, nd.right);
  }
  return j;
}

inline int node_from_json(const nlohmann::json& j, Tree& tree) {
  const int index = static_cast<int>(tree.nodes.size());
  tree.nodes.emplace_back();
  if (j.contains("c")) {
    tree.nodes[index].counts = j.at("c").get<std::vector<std::int64_t>>();
  } else {
    tree.nodes[index].feature = j.at("f").get<int>();
    tree.nodes[index].threshold = j.at("t").get<double>();
    const int l = node_from_json(j.at("l"), tree);
    tree.nodes[index].left = l;
    const int r = node_from_json(j.at("r"), tree);
    tree.nodes[index].right = r;
  }
  return index;
}

}  // namespace detail

inline nlohmann::ordered_json forest_to_json(const Forest& forest) {
  nlohmann::ordered_json j;
  j["format"] = "sij-forest";
  j["version"] = 1;
  j["params"] = {{"n_trees", forest.params.n_trees},
                 {"max_depth", forest.params.max_depth},
                 {"features_per_split", forest.params.features_per_split},
                 {"min_samples_leaf", forest.params.min_samples_leaf},
                 {"seed", forest.params.seed}};
  j["n_classes"] = forest.n_classes;
  j["n_features"] = forest.n_features;
  auto trees = nlohmann::ordered_json::array();
  for (const auto& tree : forest.trees) trees.push_back(detail::node_to_json(tree, 0));
  j["trees"] = std::move(trees);
  return j;
}

inline Forest forest_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "sij-forest" || j.value("version", 0) != 1)
    throw IoError("unrecognized forest serialization");
  Forest forest;
  const auto& p = j.at("params");
  forest.params.n_trees = p.at("n_trees").get<int>();
  forest.params.max_depth = p.at("max_depth").get<int>();
  forest.params.features_per_split = p.at("features_per_split").get<int>();
  forest.params.min_samples_leaf = p.at("min_samples_leaf").get<int>();
  forest.params.seed = p.at("seed").get<std::uint64_t>();
  forest.n_classes = j.at("n_classes").get<int>();
  forest.n_features = j.at("n_features").get<int>();
  for (const auto& t : j.at("trees")) {
    Tree tree;
    detail::node_from_json(t, tree);
    forest.trees.push_back(std::move(tree));
  }
  return forest;
}

inline std::string forest_to_string(const Forest& forest) {
  return forest_to_json(forest).dump();
}

inline void save_forest(const Forest& forest, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << forest_to_json(forest).dump(1) << "\n";
}

inline Forest load_forest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("missing forest file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed forest file " + path.string() + ": " + e.what());
  }
  return forest_from_json(j);
}

}  // namespace sij
