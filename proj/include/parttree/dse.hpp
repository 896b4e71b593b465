#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <future>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "parttree/common.hpp"
#include "parttree/flowdata.hpp"
#include "parttree/partition.hpp"
#include "parttree/resource.hpp"
#include "parttree/rulegen.hpp"

namespace parttree {

struct SearchSpace {
  uint32_t depth_min = 1, depth_max = 8;
  uint32_t k_min = 1, k_max = 6;
  uint32_t p_min = 1, p_max = 4;
  enum class Composition : uint8_t { random, balanced } composition =
      Composition::random;
  std::vector<unsigned> feature_widths = {32};
  std::vector<uint64_t> scenarios = {10'000};
  uint32_t iterations = 50;
  uint32_t batch = 8;
  double fresh_ratio = 0.5;
  double holdout = 0.3;
  uint64_t seed = 1;

  void validate() const {
    if (depth_min < 1 || depth_min > depth_max)
      throw config_error("bad depth range");
    if (k_min < 1 || k_min > k_max) throw config_error("bad k range");
    if (p_min < 1 || p_min > p_max) throw config_error("bad p range");
    if (p_min > depth_max)
      throw config_error("p_min exceeds depth_max; no valid partitioning");
    if (feature_widths.empty()) throw config_error("no feature widths");
    if (scenarios.empty()) throw config_error("no flow scenarios");
    if (holdout <= 0.0 || holdout >= 1.0)
      throw config_error("holdout must be in (0,1)");
    if (fresh_ratio < 0.0 || fresh_ratio > 1.0)
      throw config_error("fresh_ratio must be in [0,1]");
  }

  uint64_t min_scenario() const {
    return *std::min_element(scenarios.begin(), scenarios.end());
  }
};

struct Candidate {
  PartitionConfig config;
  unsigned feature_width = 32;

  std::string key() const {
    return "D" + std::to_string(config.total_depth) + "_k" +
           std::to_string(config.k) + "_s" + config.sizes_string() + "_w" +
           std::to_string(feature_width);
  }
  bool operator==(const Candidate& o) const { return key() == o.key(); }
};

struct EvalResult {
  Candidate candidate;
  double f1 = 0.0;
  uint64_t flows_supported = 0;
  bool feasible = false;
  std::string infeasible_reason;
  bool failed = false;
  std::string fail_reason;
  ResourceReport report;
  double wall_time_s = 0.0;  // informational; excluded from history output
};

// ---------------------------------------------------------------------------
// Pareto filtering

struct ParetoPoint {
  double f1 = 0.0;
  uint64_t flows = 0;
  size_t id = 0;  // caller payload index
};

// Exact non-dominated filter (a dominates b iff f1 >= and flows >= with one
// strict). Output sorted by flows ascending, f1 non-increasing.
inline std::vector<ParetoPoint> pareto_front(std::vector<ParetoPoint> pts) {
  std::stable_sort(pts.begin(), pts.end(),
                   [](const ParetoPoint& a, const ParetoPoint& b) {
                     if (a.flows != b.flows) return a.flows > b.flows;
                     return a.f1 > b.f1;
                   });
  std::vector<ParetoPoint> keep;
  double best_f1_above = -1.0;  // best f1 among strictly larger flow counts
  size_t i = 0;
  while (i < pts.size()) {
    size_t j = i;
    while (j < pts.size() && pts[j].flows == pts[i].flows) ++j;
    double group_max = pts[i].f1;  // group is sorted f1-descending
    for (size_t t = i; t < j; ++t)
      if (pts[t].f1 >= group_max && pts[t].f1 > best_f1_above)
        keep.push_back(pts[t]);
    best_f1_above = std::max(best_f1_above, group_max);
    i = j;
  }
  std::stable_sort(keep.begin(), keep.end(),
                   [](const ParetoPoint& a, const ParetoPoint& b) {
                     if (a.flows != b.flows) return a.flows < b.flows;
                     if (a.f1 != b.f1) return a.f1 > b.f1;
                     return a.id < b.id;
                   });
  return keep;
}

// ---------------------------------------------------------------------------
// Evaluation pipeline: train -> score -> compile -> estimate -> gate

inline Dataset subset_dataset(const Dataset& ds,
                              const std::vector<uint32_t>& idx) {
  Dataset out;
  out.p = ds.p;
  out.bit_width = ds.bit_width;
  out.feature_names = ds.feature_names;
  for (uint32_t i : idx) out.flows.push_back(ds.flows[i]);
  return out;
}

// Stratified split at flow granularity; the shuffle is a pure function of
// (seed, label), so the split does not depend on evaluation order.
inline std::pair<std::vector<uint32_t>, std::vector<uint32_t>>
stratified_split(const Dataset& ds, double holdout, uint64_t seed) {
  std::map<uint32_t, std::vector<uint32_t>> by_label;
  for (size_t i = 0; i < ds.flows.size(); ++i)
    by_label[ds.flows[i].label].push_back(static_cast<uint32_t>(i));
  std::vector<uint32_t> train, test;
  for (auto& [label, idx] : by_label) {
    auto rng = make_rng(seed, 0x517a5 + label);
    std::shuffle(idx.begin(), idx.end(), rng);
    size_t n_test = static_cast<size_t>(idx.size() * holdout);
    for (size_t i = 0; i < idx.size(); ++i)
      (i < n_test ? test : train).push_back(idx[i]);
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

inline double macro_f1(const std::vector<uint32_t>& y_true,
                       const std::vector<uint32_t>& y_pred) {
  std::set<uint32_t> classes(y_true.begin(), y_true.end());
  classes.insert(y_pred.begin(), y_pred.end());
  if (classes.empty()) return 0.0;
  double sum = 0.0;
  for (uint32_t c : classes) {
    uint64_t tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < y_true.size(); ++i) {
      if (y_pred[i] == c && y_true[i] == c) ++tp;
      if (y_pred[i] == c && y_true[i] != c) ++fp;
      if (y_pred[i] != c && y_true[i] == c) ++fn;
    }
    uint64_t den = 2 * tp + fp + fn;
    sum += den == 0 ? 0.0 : 2.0 * tp / den;
  }
  return sum / classes.size();
}

// Per-partition exit fractions measured on a set of flows: the fraction of
// flows whose inference terminates at each partition.
inline std::vector<double> measured_exit_fractions(
    const PartitionedModel& model, const Dataset& ds) {
  std::vector<uint64_t> exits(model.config.p(), 0);
  for (const auto& wf : ds.flows) {
    auto res = infer_offline(model, wf.windows);
    uint32_t last = model.partition_of(res.trace.back().sid);
    ++exits[last];
  }
  std::vector<double> frac(model.config.p(), 0.0);
  if (!ds.flows.empty())
    for (size_t j = 0; j < exits.size(); ++j)
      frac[j] = static_cast<double>(exits[j]) / ds.flows.size();
  return frac;
}

inline EvalResult evaluate(const Candidate& cand, const Dataset& ds,
                           const TargetProfile& profile,
                           const EnvironmentModel& env, double holdout,
                           uint64_t split_seed,
                           const FeatureCatalog& catalog = default_catalog()) {
  EvalResult res;
  res.candidate = cand;
  auto t0 = std::chrono::steady_clock::now();
  try {
    auto [train_idx, test_idx] = stratified_split(ds, holdout, split_seed);
    Dataset train = subset_dataset(ds, train_idx);
    Dataset test = subset_dataset(ds, test_idx);

    PartitionedModel model = train_partitioned(train, cand.config);

    std::vector<uint32_t> y_true, y_pred;
    for (const auto& wf : test.flows) {
      y_true.push_back(wf.label);
      y_pred.push_back(infer_offline(model, wf.windows).label);
    }
    res.f1 = macro_f1(y_true, y_pred);

    CompiledTables tables = compile_model(model, profile.sid_bits);
    res.report =
        estimate(tables, cand.config, profile, cand.feature_width, catalog);
    auto exits = measured_exit_fractions(model, train);
    res.report.recirc_bps = estimate_recirc(cand.config, env, exits,
                                            profile.control_packet_bits);
    res.flows_supported = res.report.flows_supported;
    auto verdict = check_feasibility(res.report, profile, env.active_flows);
    res.feasible = verdict.feasible;
    res.infeasible_reason = verdict.reason;
  } catch (const error& e) {
    res.failed = true;
    res.fail_reason = e.what();
    res.feasible = false;
  }
  res.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return res;
}

// ---------------------------------------------------------------------------
// Search driver

struct ArchiveEntry {
  double f1 = 0.0;
  uint64_t flows = 0;
  Candidate candidate;
  ResourceReport report;
};

struct SearchResult {
  std::vector<ArchiveEntry> archive;  // pareto-front, flows ascending
  std::vector<EvalResult> history;    // every evaluation in proposal order
  size_t evaluations = 0;
};

namespace dse_detail {

inline std::vector<uint32_t> compose_sizes(uint32_t depth, uint32_t p,
                                           SearchSpace::Composition comp,
                                           std::mt19937_64& rng) {
  std::vector<uint32_t> sizes(p, 1);
  uint32_t rest = depth - p;
  if (comp == SearchSpace::Composition::balanced) {
    for (uint32_t i = 0; i < rest; ++i) ++sizes[i % p];
  } else {
    std::uniform_int_distribution<uint32_t> pick(0, p - 1);
    for (uint32_t i = 0; i < rest; ++i) ++sizes[pick(rng)];
  }
  return sizes;
}

inline Candidate sample_candidate(const SearchSpace& space,
                                  std::mt19937_64& rng) {
  std::uniform_int_distribution<uint32_t> pdist(
      space.p_min, std::min(space.p_max, space.depth_max));
  uint32_t p = pdist(rng);
  std::uniform_int_distribution<uint32_t> ddist(
      std::max(space.depth_min, p), space.depth_max);
  uint32_t depth = ddist(rng);
  std::uniform_int_distribution<uint32_t> kdist(space.k_min, space.k_max);
  std::uniform_int_distribution<size_t> wdist(0,
                                              space.feature_widths.size() - 1);
  Candidate c;
  c.config.total_depth = depth;
  c.config.partition_sizes = compose_sizes(depth, p, space.composition, rng);
  c.config.k = kdist(rng);
  c.feature_width = space.feature_widths[wdist(rng)];
  return c;
}

// Local moves over an archive member: +-1 on depth, +-1 on k, or moving one
// level between two partitions.
inline Candidate mutate_candidate(const SearchSpace& space, Candidate c,
                                  std::mt19937_64& rng) {
  std::uniform_int_distribution<int> op(0, 4);
  auto& sizes = c.config.partition_sizes;
  std::uniform_int_distribution<size_t> pick(0, sizes.size() - 1);
  switch (op(rng)) {
    case 0:  // D + 1
      if (c.config.total_depth < space.depth_max) {
        ++sizes[pick(rng)];
        ++c.config.total_depth;
      }
      break;
    case 1: {  // D - 1
      size_t i = pick(rng);
      if (sizes[i] > 1 && c.config.total_depth > space.depth_min) {
        --sizes[i];
        --c.config.total_depth;
      }
      break;
    }
    case 2:
      if (c.config.k < space.k_max) ++c.config.k;
      break;
    case 3:
      if (c.config.k > space.k_min) --c.config.k;
      break;
    case 4: {  // rebalance one level
      if (sizes.size() >= 2) {
        size_t from = pick(rng);
        size_t to = pick(rng);
        if (from != to && sizes[from] > 1) {
          --sizes[from];
          ++sizes[to];
        }
      }
      break;
    }
  }
  return c;
}

}  // namespace dse_detail

// Seeded quasi-random warm-up followed by archive mutation mixed with fresh
// samples; the whole run is a pure function of (space, traces, profile, env,
// seed). Evaluations within a batch run in parallel when jobs > 1; results
// join in proposal order, so the parallelism degree never changes the output.
inline SearchResult run_search(const SearchSpace& space,
                               const std::vector<FlowTrace>& traces,
                               const TargetProfile& profile,
                               const EnvironmentModel& env,
                               const FeatureCatalog& catalog = default_catalog(),
                               unsigned jobs = 1) {
  space.validate();
  SearchResult result;
  if (space.iterations == 0) return result;

  // The archive gate requires every candidate to support the smallest
  // scenario; larger scenarios are read off the front afterwards. The
  // environment keeps its duration/name but adopts the gate's flow count so
  // the recirculation estimate matches the gated deployment.
  EnvironmentModel gate_env = env;
  gate_env.active_flows = space.min_scenario();

  std::map<std::pair<unsigned, unsigned>, Dataset> dataset_cache;  // (p, w)
  auto dataset_for = [&](unsigned p, unsigned width) -> const Dataset& {
    auto key = std::make_pair(p, width);
    auto it = dataset_cache.find(key);
    if (it == dataset_cache.end())
      it = dataset_cache
               .emplace(key, build_partitioned_dataset(traces, p, catalog, width))
               .first;
    return it->second;
  };

  auto rng = make_rng(space.seed, 0xd5e);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::map<std::string, EvalResult> cache;
  std::vector<ArchiveEntry> archive;
  const uint32_t warmup = std::max<uint32_t>(1, space.iterations / 5);

  for (uint32_t it = 0; it < space.iterations; ++it) {
    std::vector<Candidate> batch;
    for (uint32_t b = 0; b < space.batch; ++b) {
      if (it < warmup || archive.empty() || unit(rng) < space.fresh_ratio) {
        batch.push_back(dse_detail::sample_candidate(space, rng));
      } else {
        std::uniform_int_distribution<size_t> pick(0, archive.size() - 1);
        batch.push_back(dse_detail::mutate_candidate(
            space, archive[pick(rng)].candidate, rng));
      }
    }

    // Evaluate the batch; previously seen candidates are not re-run.
    std::vector<EvalResult> batch_results(batch.size());
    std::vector<std::pair<size_t, std::future<EvalResult>>> pending;
    std::map<std::string, size_t> first_in_batch;
    std::vector<std::pair<size_t, size_t>> dups;  // (i, first occurrence)
    for (size_t i = 0; i < batch.size(); ++i) {
      auto key = batch[i].key();
      auto hit = cache.find(key);
      if (hit != cache.end()) {
        batch_results[i] = hit->second;
        continue;
      }
      auto seen = first_in_batch.find(key);
      if (seen != first_in_batch.end()) {
        dups.emplace_back(i, seen->second);
        continue;
      }
      first_in_batch.emplace(key, i);
      const Dataset& ds = dataset_for(batch[i].config.p(), batch[i].feature_width);
      uint64_t split_seed = mix_seed(space.seed, batch[i].config.p());
      auto task = [&, i, split_seed, &ds_ref = ds] {
        return evaluate(batch[i], ds_ref, profile, gate_env, space.holdout,
                        split_seed, catalog);
      };
      if (jobs > 1 && pending.size() < jobs)
        pending.emplace_back(i, std::async(std::launch::async, task));
      else
        batch_results[i] = task();
    }
    for (auto& [i, fut] : pending) batch_results[i] = fut.get();
    for (auto& [i, first] : dups) batch_results[i] = batch_results[first];
    for (size_t i = 0; i < batch.size(); ++i) {
      cache[batch[i].key()] = batch_results[i];
      result.history.push_back(batch_results[i]);
      ++result.evaluations;
    }

    // Serialized archive update at batch end.
    std::vector<ArchiveEntry> pool = archive;
    for (const auto& er : batch_results)
      if (er.feasible && !er.failed)
        pool.push_back(ArchiveEntry{er.f1, er.flows_supported, er.candidate,
                                    er.report});
    std::vector<ParetoPoint> pts;
    for (size_t i = 0; i < pool.size(); ++i)
      pts.push_back(ParetoPoint{pool[i].f1, pool[i].flows, i});
    // Objective-equal candidates tie under dominance; the archive keeps one
    // per distinct (f1, flows) point, preferring the longest-lived member
    // (pareto_front orders ties by pool index, and archive members precede
    // the batch in the pool).
    std::vector<ArchiveEntry> next;
    for (const auto& pt : pareto_front(pts)) {
      if (!next.empty() && next.back().f1 == pt.f1 &&
          next.back().flows == pt.flows)
        continue;
      next.push_back(pool[pt.id]);
    }
    archive = std::move(next);
  }

  result.archive = std::move(archive);
  return result;
}

// ---------------------------------------------------------------------------
// Output files

inline void write_pareto_csv(std::ostream& out,
                             const std::vector<ArchiveEntry>& archive) {
  out << "flows,f1,D,k,sizes,tcam_entries,register_bits\n";
  char f1buf[32];
  for (const auto& e : archive) {
    std::snprintf(f1buf, sizeof f1buf, "%.6f", e.f1);
    out << e.flows << ',' << f1buf << ',' << e.candidate.config.total_depth
        << ',' << e.candidate.config.k << ','
        << e.candidate.config.sizes_string() << ',' << e.report.tcam_entries
        << ',' << e.report.per_flow_register_bits << "\n";
  }
}

inline nlohmann::ordered_json eval_to_json(const EvalResult& er) {
  nlohmann::ordered_json j;
  j["candidate"] = {{"D", er.candidate.config.total_depth},
                    {"k", er.candidate.config.k},
                    {"sizes", er.candidate.config.partition_sizes},
                    {"feature_width", er.candidate.feature_width}};
  j["f1"] = er.f1;
  j["flows_supported"] = er.flows_supported;
  j["feasible"] = er.feasible;
  if (!er.feasible) j["reason"] = er.failed ? er.fail_reason : er.infeasible_reason;
  j["failed"] = er.failed;
  j["tcam_entries"] = er.report.tcam_entries;
  j["tcam_bits"] = er.report.tcam_bits;
  j["per_flow_register_bits"] = er.report.per_flow_register_bits;
  j["recirc_bps"] = er.report.recirc_bps;
  return j;
}

inline void write_history_jsonl(std::ostream& out,
                                const std::vector<EvalResult>& history) {
  for (const auto& er : history) out << eval_to_json(er).dump() << "\n";
}

}  // namespace parttree
