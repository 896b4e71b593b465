#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "parttree/common.hpp"

namespace parttree {

struct Sample {
  std::vector<uint64_t> features;
  uint32_t label = 0;
};

// Arena node: either a split (feature, threshold, children) or a leaf.
// Split convention: values <= threshold go left, > threshold go right.
struct TreeNode {
  bool is_leaf = true;
  uint32_t feature = 0;
  uint64_t threshold = 0;
  int32_t left = -1;
  int32_t right = -1;
  uint32_t label = 0;
  uint64_t sample_count = 0;
  uint32_t depth = 0;
};

struct Subtree {
  std::vector<TreeNode> nodes;
  int32_t root = -1;
  uint32_t depth_cap = 0;
  uint32_t feature_budget = 0;
  std::vector<uint32_t> used_features;  // sorted, |.| <= feature_budget

  const TreeNode& node(int32_t id) const { return nodes[id]; }
};

struct TrainOptions {
  uint32_t depth_cap = 1;
  uint32_t feature_budget = 1;
  uint32_t min_samples_split = 2;
  // When set, candidate split features are restricted to this set (used by
  // the top-k baseline); the budget still applies on top.
  std::optional<std::vector<uint32_t>> allowed_features;
};

namespace dt_detail {

struct SplitScore {
  // Maximizing S_L/n_L + S_R/n_R minimizes the weighted Gini impurity of
  // the children (S = sum of squared class counts). Kept as an exact
  // fraction so ties break deterministically.
  uint64_t num = 0;
  uint64_t den = 1;

  bool better_than(const SplitScore& o) const {
    return static_cast<unsigned __int128>(num) * o.den >
           static_cast<unsigned __int128>(o.num) * den;
  }
};

struct BestSplit {
  bool found = false;
  uint32_t feature = 0;
  uint64_t threshold = 0;
  SplitScore score;
};

// Best threshold for one feature over the node's samples: scan distinct
// observed values in order, thresholds are the values themselves (every
// split is exact in fixed point). Returns nothing if the feature is
// constant across the node.
inline void scan_feature(std::span<const Sample> samples,
                         std::span<const uint32_t> idx, uint32_t feature,
                         const std::map<uint32_t, uint32_t>& label_ids,
                         BestSplit& best) {
  thread_local std::vector<std::pair<uint64_t, uint32_t>> vals;
  vals.clear();
  vals.reserve(idx.size());
  for (uint32_t i : idx)
    vals.emplace_back(samples[i].features[feature],
                      label_ids.at(samples[i].label));
  std::sort(vals.begin(), vals.end());
  if (vals.front().first == vals.back().first) return;

  const size_t n_classes = label_ids.size();
  thread_local std::vector<uint64_t> left_cnt, right_cnt;
  left_cnt.assign(n_classes, 0);
  right_cnt.assign(n_classes, 0);
  for (const auto& [v, c] : vals) ++right_cnt[c];

  uint64_t s_left = 0;
  uint64_t s_right = 0;
  for (uint64_t c : right_cnt) s_right += c * c;

  const uint64_t n = vals.size();
  uint64_t n_left = 0;
  size_t i = 0;
  while (i < vals.size()) {
    uint64_t v = vals[i].first;
    // move the whole group of equal values to the left side
    while (i < vals.size() && vals[i].first == v) {
      uint32_t c = vals[i].second;
      s_left += 2 * left_cnt[c] + 1;
      s_right -= 2 * right_cnt[c] - 1;
      ++left_cnt[c];
      --right_cnt[c];
      ++n_left;
      ++i;
    }
    if (i == vals.size()) break;  // v is the max value: no right side
    uint64_t n_right = n - n_left;
    SplitScore sc{s_left * n_right + s_right * n_left, n_left * n_right};
    if (!best.found || sc.better_than(best.score)) {
      best.found = true;
      best.feature = feature;
      best.threshold = v;
      best.score = sc;
    }
  }
}

}  // namespace dt_detail

// Greedy budget-aware CART. A node is split while it is impure, depth
// remains under the cap, it has at least min_samples_split samples, and some
// candidate feature is non-constant; zero-gain splits are taken (they let
// deeper levels separate interactions a single level cannot). New features
// may enter only while the distinct-feature budget is not exhausted. Ties in
// the split score break toward the lowest feature index, then the lowest
// threshold.
inline Subtree train_subtree_subset(std::span<const Sample> samples,
                                    std::span<const uint32_t> index,
                                    const TrainOptions& opt) {
  if (opt.feature_budget < 1) throw config_error("feature budget k must be >= 1");
  if (index.empty()) throw config_error("train_subtree: no samples");
  const size_t n_features = samples[index[0]].features.size();

  Subtree tree;
  tree.depth_cap = opt.depth_cap;
  tree.feature_budget = opt.feature_budget;

  std::map<uint32_t, uint32_t> label_ids;
  for (uint32_t i : index) label_ids.emplace(samples[i].label, 0);
  {
    uint32_t next = 0;
    for (auto& [label, id] : label_ids) id = next++;
  }

  std::vector<uint32_t> used;  // sorted feature set committed so far

  auto majority_label = [&](std::span<const uint32_t> idx) {
    std::map<uint32_t, uint64_t> counts;
    for (uint32_t i : idx) ++counts[samples[i].label];
    uint32_t best_label = 0;
    uint64_t best_count = 0;
    for (const auto& [label, cnt] : counts)
      if (cnt > best_count) {  // map order breaks ties toward lowest label
        best_label = label;
        best_count = cnt;
      }
    return best_label;
  };

  auto is_pure = [&](std::span<const uint32_t> idx) {
    for (size_t i = 1; i < idx.size(); ++i)
      if (samples[idx[i]].label != samples[idx[0]].label) return false;
    return true;
  };

  auto allowed = [&](uint32_t f) {
    return !opt.allowed_features ||
           std::find(opt.allowed_features->begin(), opt.allowed_features->end(),
                     f) != opt.allowed_features->end();
  };

  // Pre-order recursion so the budget set grows deterministically.
  auto build = [&](auto&& self, std::vector<uint32_t> idx,
                   uint32_t depth) -> int32_t {
    auto make_leaf = [&]() {
      TreeNode leaf;
      leaf.is_leaf = true;
      leaf.label = majority_label(idx);
      leaf.sample_count = idx.size();
      leaf.depth = depth;
      tree.nodes.push_back(leaf);
      return static_cast<int32_t>(tree.nodes.size() - 1);
    };

    if (depth >= opt.depth_cap || idx.size() < opt.min_samples_split ||
        is_pure(idx))
      return make_leaf();

    dt_detail::BestSplit best;
    const bool under_budget = used.size() < opt.feature_budget;
    for (uint32_t f = 0; f < n_features; ++f) {
      bool in_used = std::binary_search(used.begin(), used.end(), f);
      if (!in_used && !under_budget) continue;
      if (!allowed(f)) continue;
      dt_detail::scan_feature(samples, idx, f, label_ids, best);
    }
    if (!best.found) return make_leaf();

    if (!std::binary_search(used.begin(), used.end(), best.feature)) {
      used.insert(std::upper_bound(used.begin(), used.end(), best.feature),
                  best.feature);
    }

    std::vector<uint32_t> left_idx, right_idx;
    for (uint32_t i : idx) {
      if (samples[i].features[best.feature] <= best.threshold)
        left_idx.push_back(i);
      else
        right_idx.push_back(i);
    }
    idx.clear();
    idx.shrink_to_fit();

    TreeNode split;
    split.is_leaf = false;
    split.feature = best.feature;
    split.threshold = best.threshold;
    split.sample_count = left_idx.size() + right_idx.size();
    split.depth = depth;
    tree.nodes.push_back(split);
    int32_t id = static_cast<int32_t>(tree.nodes.size() - 1);

    int32_t l = self(self, std::move(left_idx), depth + 1);
    int32_t r = self(self, std::move(right_idx), depth + 1);
    tree.nodes[id].left = l;
    tree.nodes[id].right = r;
    return id;
  };

  std::vector<uint32_t> all(index.begin(), index.end());
  tree.root = build(build, std::move(all), 0);
  tree.used_features = used;
  return tree;
}

inline Subtree train_subtree(std::span<const Sample> samples,
                             uint32_t depth_cap, uint32_t feature_budget) {
  std::vector<uint32_t> index(samples.size());
  for (size_t i = 0; i < index.size(); ++i) index[i] = static_cast<uint32_t>(i);
  TrainOptions opt;
  opt.depth_cap = depth_cap;
  opt.feature_budget = feature_budget;
  return train_subtree_subset(samples, index, opt);
}

// Root-to-leaf traversal; ties (value == threshold) go left.
inline std::pair<int32_t, uint32_t> predict(const Subtree& tree,
                                            std::span<const uint64_t> x) {
  int32_t id = tree.root;
  while (!tree.nodes[id].is_leaf) {
    const TreeNode& nd = tree.nodes[id];
    id = x[nd.feature] <= nd.threshold ? nd.left : nd.right;
  }
  return {id, tree.nodes[id].label};
}

inline std::vector<uint32_t> distinct_features(const Subtree& tree) {
  std::vector<uint32_t> out;
  for (const auto& nd : tree.nodes)
    if (!nd.is_leaf &&
        std::find(out.begin(), out.end(), nd.feature) == out.end())
      out.push_back(nd.feature);
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<int32_t> leaves(const Subtree& tree) {
  std::vector<int32_t> out;
  for (size_t i = 0; i < tree.nodes.size(); ++i)
    if (tree.nodes[i].is_leaf) out.push_back(static_cast<int32_t>(i));
  return out;
}

inline double training_accuracy(const Subtree& tree,
                                std::span<const Sample> samples) {
  if (samples.empty()) return 0.0;
  size_t hit = 0;
  for (const auto& s : samples)
    if (predict(tree, s.features).second == s.label) ++hit;
  return static_cast<double>(hit) / samples.size();
}

// Per-feature impurity-gain totals (sample-weighted Gini decrease), used to
// rank features for the top-k baseline. Recomputed from the tree structure
// and the samples it was trained on.
inline std::vector<double> feature_importance(const Subtree& tree,
                                              std::span<const Sample> samples,
                                              size_t n_features) {
  std::vector<double> gain(n_features, 0.0);

  auto node_score = [&](const std::vector<uint32_t>& idx) {
    std::map<uint32_t, uint64_t> counts;
    for (uint32_t i : idx) ++counts[samples[i].label];
    double s = 0;
    for (const auto& [label, c] : counts) s += double(c) * double(c);
    // n * gini = n - S/n
    double n = static_cast<double>(idx.size());
    return n - s / n;
  };

  auto walk = [&](auto&& self, int32_t id, std::vector<uint32_t> idx) -> void {
    const TreeNode& nd = tree.nodes[id];
    if (nd.is_leaf || idx.empty()) return;
    std::vector<uint32_t> left_idx, right_idx;
    for (uint32_t i : idx)
      (samples[i].features[nd.feature] <= nd.threshold ? left_idx : right_idx)
          .push_back(i);
    double g = node_score(idx);
    if (!left_idx.empty()) g -= node_score(left_idx);
    if (!right_idx.empty()) g -= node_score(right_idx);
    gain[nd.feature] += g;
    self(self, nd.left, std::move(left_idx));
    self(self, nd.right, std::move(right_idx));
  };

  std::vector<uint32_t> all(samples.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<uint32_t>(i);
  walk(walk, tree.root, std::move(all));
  return gain;
}

// ---------------------------------------------------------------------------
// JSON serialization
// {nodes:[{kind,feature,threshold,left,right,label,count}], root, k, depth_cap}

inline nlohmann::ordered_json subtree_to_json(const Subtree& tree) {
  nlohmann::ordered_json j;
  j["nodes"] = nlohmann::ordered_json::array();
  for (const auto& nd : tree.nodes) {
    nlohmann::ordered_json n;
    if (nd.is_leaf) {
      n["kind"] = "leaf";
      n["label"] = nd.label;
      n["count"] = nd.sample_count;
    } else {
      n["kind"] = "split";
      n["feature"] = nd.feature;
      n["threshold"] = nd.threshold;
      n["left"] = nd.left;
      n["right"] = nd.right;
    }
    j["nodes"].push_back(std::move(n));
  }
  j["root"] = tree.root;
  j["k"] = tree.feature_budget;
  j["depth_cap"] = tree.depth_cap;
  return j;
}

inline Subtree subtree_from_json(const nlohmann::json& j) {
  Subtree tree;
  tree.root = j.at("root").get<int32_t>();
  tree.feature_budget = j.at("k").get<uint32_t>();
  tree.depth_cap = j.at("depth_cap").get<uint32_t>();
  for (const auto& n : j.at("nodes")) {
    TreeNode nd;
    if (n.at("kind") == "leaf") {
      nd.is_leaf = true;
      nd.label = n.at("label").get<uint32_t>();
      nd.sample_count = n.at("count").get<uint64_t>();
    } else {
      nd.is_leaf = false;
      nd.feature = n.at("feature").get<uint32_t>();
      nd.threshold = n.at("threshold").get<uint64_t>();
      nd.left = n.at("left").get<int32_t>();
      nd.right = n.at("right").get<int32_t>();
    }
    tree.nodes.push_back(nd);
  }
  if (tree.root < 0 || tree.root >= static_cast<int32_t>(tree.nodes.size()))
    throw parse_error("subtree json: root out of range");
  for (const auto& nd : tree.nodes)
    if (!nd.is_leaf &&
        (nd.left < 0 || nd.right < 0 ||
         nd.left >= static_cast<int32_t>(tree.nodes.size()) ||
         nd.right >= static_cast<int32_t>(tree.nodes.size())))
      throw parse_error("subtree json: child id out of range");
  // restore depths
  auto fix = [&](auto&& self, int32_t id, uint32_t d) -> void {
    tree.nodes[id].depth = d;
    if (!tree.nodes[id].is_leaf) {
      self(self, tree.nodes[id].left, d + 1);
      self(self, tree.nodes[id].right, d + 1);
    }
  };
  fix(fix, tree.root, 0);
  tree.used_features = distinct_features(tree);
  return tree;
}

}  // namespace parttree
