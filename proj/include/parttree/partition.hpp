#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "parttree/dtree.hpp"
#include "parttree/flowdata.hpp"

namespace parttree {

struct PartitionConfig {
  uint32_t total_depth = 1;
  std::vector<uint32_t> partition_sizes;  // [i_1 .. i_p], sum = total_depth
  uint32_t k = 1;

  uint32_t p() const { return static_cast<uint32_t>(partition_sizes.size()); }

  void validate() const {
    if (partition_sizes.empty()) throw config_error("partition_sizes is empty");
    if (k < 1) throw config_error("k must be >= 1");
    uint32_t sum = 0;
    for (uint32_t s : partition_sizes) {
      if (s < 1) throw config_error("every partition size must be >= 1");
      sum += s;
    }
    if (sum != total_depth)
      throw config_error("partition sizes sum to " + std::to_string(sum) +
                         ", expected total depth " + std::to_string(total_depth));
  }

  std::string sizes_string() const {
    std::string s;
    for (size_t i = 0; i < partition_sizes.size(); ++i) {
      if (i) s += '-';
      s += std::to_string(partition_sizes[i]);
    }
    return s;
  }
};

struct RouteAction {
  enum Kind : uint8_t { next_sid, final_class } kind = final_class;
  uint32_t value = 0;

  static RouteAction next(uint32_t sid) { return {next_sid, sid}; }
  static RouteAction cls(uint32_t label) { return {final_class, label}; }
  bool operator==(const RouteAction&) const = default;
};

// SID 0 is reserved for "unclassified"; trained subtrees get SIDs assigned
// breadth-first across partitions starting at 1.
constexpr uint32_t kUnclassifiedSid = 0;
constexpr uint32_t kInitialSid = 1;

struct PartitionedModel {
  PartitionConfig config;
  unsigned feature_width = 32;
  uint32_t num_features = 0;

  struct Entry {
    Subtree tree;
    uint32_t partition = 0;
  };
  std::map<uint32_t, Entry> subtrees;                       // sid -> subtree
  std::map<std::pair<uint32_t, int32_t>, RouteAction> routing;  // (sid, leaf)
  uint32_t initial_sid = kInitialSid;

  uint32_t partition_of(uint32_t sid) const {
    auto it = subtrees.find(sid);
    if (it == subtrees.end())
      throw integrity_error("unknown SID " + std::to_string(sid));
    return it->second.partition;
  }

  const RouteAction& route(uint32_t sid, int32_t leaf) const {
    auto it = routing.find({sid, leaf});
    if (it == routing.end())
      throw integrity_error("routing gap at sid " + std::to_string(sid) +
                            " leaf " + std::to_string(leaf));
    return it->second;
  }
};

namespace part_detail {

inline bool subset_pure(std::span<const Sample> samples,
                        std::span<const uint32_t> idx) {
  for (size_t i = 1; i < idx.size(); ++i)
    if (samples[idx[i]].label != samples[idx[0]].label) return false;
  return true;
}

}  // namespace part_detail

// Recursive partitioned training: partition 0 trains one subtree on all
// window-0 samples; every max-depth leaf whose sample subset is still impure
// spawns a child subtree in the next partition, trained on those same flows'
// next-window samples. Leaves below the depth cap, pure max-depth leaves, and
// all final-partition leaves become final-class exits.
inline PartitionedModel train_partitioned(const Dataset& ds,
                                          const PartitionConfig& config) {
  config.validate();
  if (ds.flows.empty()) throw config_error("train_partitioned: empty dataset");
  const uint32_t p = config.p();
  if (ds.p != p)
    throw config_error("dataset has " + std::to_string(ds.p) +
                       " windows per flow, config expects " + std::to_string(p));

  // window_samples[j][i] = features of flow i in window j
  std::vector<std::vector<Sample>> window_samples(p);
  for (uint32_t j = 0; j < p; ++j) {
    window_samples[j].reserve(ds.flows.size());
    for (const auto& wf : ds.flows)
      window_samples[j].push_back(Sample{wf.windows[j], wf.label});
  }

  PartitionedModel model;
  model.config = config;
  model.feature_width = ds.bit_width;
  model.num_features = static_cast<uint32_t>(ds.num_features());

  struct Task {
    uint32_t sid;
    uint32_t partition;
    std::vector<uint32_t> flow_idx;
  };
  std::deque<Task> queue;
  uint32_t next_sid = kInitialSid;

  {
    std::vector<uint32_t> all(ds.flows.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<uint32_t>(i);
    queue.push_back(Task{next_sid++, 0, std::move(all)});
  }

  while (!queue.empty()) {
    Task task = std::move(queue.front());
    queue.pop_front();
    const auto& samples = window_samples[task.partition];
    const uint32_t cap = config.partition_sizes[task.partition];

    TrainOptions opt;
    opt.depth_cap = cap;
    opt.feature_budget = config.k;
    Subtree tree = train_subtree_subset(samples, task.flow_idx, opt);

    // Partition the task's flows by the leaf they reach.
    std::map<int32_t, std::vector<uint32_t>> leaf_subsets;
    for (uint32_t i : task.flow_idx)
      leaf_subsets[predict(tree, samples[i].features).first].push_back(i);

    for (int32_t leaf_id : leaves(tree)) {
      const TreeNode& leaf = tree.nodes[leaf_id];
      auto it = leaf_subsets.find(leaf_id);
      const bool last_partition = task.partition + 1 == p;
      const bool at_cap = leaf.depth == cap;
      const bool pure =
          it == leaf_subsets.end() ||
          part_detail::subset_pure(samples, it->second);
      if (!last_partition && at_cap && !pure) {
        uint32_t child = next_sid++;
        model.routing[{task.sid, leaf_id}] = RouteAction::next(child);
        queue.push_back(Task{child, task.partition + 1, std::move(it->second)});
      } else {
        model.routing[{task.sid, leaf_id}] = RouteAction::cls(leaf.label);
      }
    }
    model.subtrees[task.sid] = PartitionedModel::Entry{std::move(tree), task.partition};
  }
  return model;
}

struct InferenceHop {
  uint32_t sid;
  int32_t leaf;
};

struct InferenceResult {
  uint32_t label = 0;
  std::vector<InferenceHop> trace;
};

inline InferenceResult infer_offline(
    const PartitionedModel& model,
    std::span<const std::vector<uint64_t>> windows) {
  const uint32_t p = model.config.p();
  if (windows.size() != p)
    throw config_error("infer_offline: expected " + std::to_string(p) +
                       " windows, got " + std::to_string(windows.size()));
  InferenceResult res;
  uint32_t sid = model.initial_sid;
  for (uint32_t hop = 0; hop < p; ++hop) {
    const auto& entry = model.subtrees.at(sid);
    auto [leaf, label] = predict(entry.tree, windows[entry.partition]);
    res.trace.push_back(InferenceHop{sid, leaf});
    const RouteAction& act = model.route(sid, leaf);
    if (act.kind == RouteAction::final_class) {
      res.label = act.value;
      return res;
    }
    sid = act.value;
  }
  throw integrity_error("inference did not terminate within p partitions");
}

// ---------------------------------------------------------------------------
// Feature density (fraction of the catalog used per subtree / per partition)

struct DensityReport {
  struct SubtreeDensity {
    uint32_t sid;
    uint32_t partition;
    double percent;
  };
  std::vector<SubtreeDensity> per_subtree;
  std::vector<double> per_partition;
  double subtree_mean = 0, subtree_stddev = 0;
  double partition_mean = 0, partition_stddev = 0;
};

namespace part_detail {

inline std::pair<double, double> mean_stddev(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double mean = 0;
  for (double x : v) mean += x;
  mean /= v.size();
  double var = 0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= v.size();
  return {mean, std::sqrt(var)};
}

}  // namespace part_detail

inline DensityReport feature_density(const PartitionedModel& model,
                                     uint32_t n_features) {
  DensityReport rep;
  std::vector<std::vector<uint32_t>> partition_union(model.config.p());
  std::vector<double> sub_pcts;
  for (const auto& [sid, entry] : model.subtrees) {
    auto feats = distinct_features(entry.tree);
    double pct = 100.0 * feats.size() / n_features;
    rep.per_subtree.push_back({sid, entry.partition, pct});
    sub_pcts.push_back(pct);
    auto& u = partition_union[entry.partition];
    for (uint32_t f : feats)
      if (std::find(u.begin(), u.end(), f) == u.end()) u.push_back(f);
  }
  for (const auto& u : partition_union)
    rep.per_partition.push_back(100.0 * u.size() / n_features);
  std::tie(rep.subtree_mean, rep.subtree_stddev) =
      part_detail::mean_stddev(sub_pcts);
  std::tie(rep.partition_mean, rep.partition_stddev) =
      part_detail::mean_stddev(rep.per_partition);
  return rep;
}

// Exit-node bookkeeping (early exits above the depth cap vs. pure exits at
// the cap), derivable from any trained model.
struct ExitCounts {
  size_t early_above_cap = 0;
  size_t pure_at_cap = 0;
  size_t final_partition = 0;
};

inline ExitCounts exit_counts(const PartitionedModel& model) {
  ExitCounts c;
  const uint32_t p = model.config.p();
  for (const auto& [key, act] : model.routing) {
    if (act.kind != RouteAction::final_class) continue;
    const auto& entry = model.subtrees.at(key.first);
    const TreeNode& leaf = entry.tree.nodes[key.second];
    if (entry.partition + 1 == p)
      ++c.final_partition;
    else if (leaf.depth < model.config.partition_sizes[entry.partition])
      ++c.early_above_cap;
    else
      ++c.pure_at_cap;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Monolithic top-k baseline: rank features by impurity gain on a depth-capped
// probe tree, then train one tree restricted to the k best.

inline Subtree train_topk_baseline(std::span<const Sample> samples,
                                   uint32_t depth, uint32_t k) {
  if (samples.empty()) throw config_error("train_topk_baseline: no samples");
  const size_t n = samples[0].features.size();

  std::vector<uint32_t> index(samples.size());
  for (size_t i = 0; i < index.size(); ++i) index[i] = static_cast<uint32_t>(i);

  TrainOptions probe_opt;
  probe_opt.depth_cap = depth;
  probe_opt.feature_budget = static_cast<uint32_t>(n);
  Subtree probe = train_subtree_subset(samples, index, probe_opt);

  auto gain = feature_importance(probe, samples, n);
  std::vector<uint32_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = static_cast<uint32_t>(i);
  std::stable_sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
    return gain[a] > gain[b];
  });
  order.resize(std::min<size_t>(k, n));
  std::sort(order.begin(), order.end());

  TrainOptions opt;
  opt.depth_cap = depth;
  opt.feature_budget = k;
  opt.allowed_features = order;
  return train_subtree_subset(samples, index, opt);
}

// ---------------------------------------------------------------------------
// JSON serialization
// {config, feature_width, num_features, subtrees:{sid: ...}, routing:[[sid,
//  leaf, action]], initial_sid}; actions rendered "next:<sid>" / "class:<id>".

inline nlohmann::ordered_json model_to_json(const PartitionedModel& model) {
  nlohmann::ordered_json j;
  j["config"] = {{"total_depth", model.config.total_depth},
                 {"partition_sizes", model.config.partition_sizes},
                 {"k", model.config.k}};
  j["feature_width"] = model.feature_width;
  j["num_features"] = model.num_features;
  j["initial_sid"] = model.initial_sid;
  j["subtrees"] = nlohmann::ordered_json::object();
  for (const auto& [sid, entry] : model.subtrees) {
    nlohmann::ordered_json e;
    e["partition"] = entry.partition;
    e["tree"] = subtree_to_json(entry.tree);
    j["subtrees"][std::to_string(sid)] = std::move(e);
  }
  j["routing"] = nlohmann::ordered_json::array();
  for (const auto& [key, act] : model.routing) {
    std::string a = act.kind == RouteAction::next_sid
                        ? "next:" + std::to_string(act.value)
                        : "class:" + std::to_string(act.value);
    j["routing"].push_back({key.first, key.second, a});
  }
  return j;
}

inline PartitionedModel model_from_json(const nlohmann::json& j) {
  PartitionedModel model;
  model.config.total_depth = j.at("config").at("total_depth").get<uint32_t>();
  model.config.partition_sizes =
      j.at("config").at("partition_sizes").get<std::vector<uint32_t>>();
  model.config.k = j.at("config").at("k").get<uint32_t>();
  model.config.validate();
  model.feature_width = j.at("feature_width").get<unsigned>();
  model.num_features = j.at("num_features").get<uint32_t>();
  model.initial_sid = j.at("initial_sid").get<uint32_t>();
  for (const auto& [key, val] : j.at("subtrees").items()) {
    PartitionedModel::Entry e;
    e.partition = val.at("partition").get<uint32_t>();
    e.tree = subtree_from_json(val.at("tree"));
    uint32_t sid = 0;
    try {
      sid = static_cast<uint32_t>(std::stoul(key));
    } catch (const std::exception&) {
      throw parse_error("model json: bad subtree id '" + key + "'");
    }
    model.subtrees[sid] = std::move(e);
  }
  for (const auto& r : j.at("routing")) {
    uint32_t sid = r.at(0).get<uint32_t>();
    int32_t leaf = r.at(1).get<int32_t>();
    std::string a = r.at(2).get<std::string>();
    auto colon = a.find(':');
    if (colon == std::string::npos)
      throw parse_error("model json: bad routing action '" + a + "'");
    uint32_t value = 0;
    try {
      value = static_cast<uint32_t>(std::stoul(a.substr(colon + 1)));
    } catch (const std::exception&) {
      throw parse_error("model json: bad routing action '" + a + "'");
    }
    if (a.rfind("next:", 0) == 0)
      model.routing[{sid, leaf}] = RouteAction::next(value);
    else if (a.rfind("class:", 0) == 0)
      model.routing[{sid, leaf}] = RouteAction::cls(value);
    else
      throw parse_error("model json: bad routing action '" + a + "'");
  }
  if (!model.subtrees.count(model.initial_sid))
    throw parse_error("model json: initial SID has no subtree");
  for (const auto& [sid, entry] : model.subtrees)
    if (entry.partition >= model.config.p())
      throw parse_error("model json: subtree partition out of range");
  for (const auto& [key, act] : model.routing) {
    if (act.kind != RouteAction::next_sid) continue;
    auto target = model.subtrees.find(act.value);
    if (target == model.subtrees.end())
      throw parse_error("model json: routing targets unknown SID " +
                        std::to_string(act.value));
    auto source = model.subtrees.find(key.first);
    if (source == model.subtrees.end() ||
        target->second.partition != source->second.partition + 1)
      throw parse_error("model json: routing must advance one partition");
  }
  return model;
}

}  // namespace parttree
