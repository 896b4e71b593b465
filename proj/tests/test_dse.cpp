#include <sstream>

#include "doctest.h"
#include "parttree/dse.hpp"
#include "parttree/synth.hpp"

using namespace parttree;

namespace {

// O(n^2) dominance filter used as the oracle.
std::vector<ParetoPoint> brute_force_front(const std::vector<ParetoPoint>& pts) {
  std::vector<ParetoPoint> keep;
  for (size_t i = 0; i < pts.size(); ++i) {
    bool dominated = false;
    for (size_t j = 0; j < pts.size() && !dominated; ++j) {
      if (i == j) continue;
      bool ge = pts[j].f1 >= pts[i].f1 && pts[j].flows >= pts[i].flows;
      bool strict = pts[j].f1 > pts[i].f1 || pts[j].flows > pts[i].flows;
      dominated = ge && strict;
    }
    if (!dominated) keep.push_back(pts[i]);
  }
  return keep;
}

std::multiset<std::pair<uint64_t, double>> as_set(
    const std::vector<ParetoPoint>& pts) {
  std::multiset<std::pair<uint64_t, double>> s;
  for (const auto& p : pts) s.insert({p.flows, p.f1});
  return s;
}

Dataset toy_separable_dataset() {
  Dataset ds;
  ds.p = 1;
  ds.bit_width = 32;
  ds.feature_names = {"feat_0", "feat_1"};
  for (int i = 0; i < 40; ++i) {
    WindowedFlow wf;
    char buf[8];
    std::snprintf(buf, sizeof buf, "t%03d", i);
    wf.flow_id = buf;
    wf.label = i % 2;
    wf.windows = {{wf.label ? 100u : 10u, uint64_t(i)}};
    wf.empty_window = {false};
    ds.flows.push_back(std::move(wf));
  }
  return ds;
}

}  // namespace

TEST_CASE("pareto_front on the dominance example") {
  std::vector<ParetoPoint> pts = {
      {0.9, 100'000, 0}, {0.8, 500'000, 1}, {0.85, 50'000, 2}};
  auto front = pareto_front(pts);
  REQUIRE(front.size() == 2);
  CHECK(front[0].flows == 100'000);
  CHECK(front[0].f1 == 0.9);
  CHECK(front[1].flows == 500'000);
  CHECK(front[1].f1 == 0.8);
}

TEST_CASE("pareto_front of nothing is nothing") {
  CHECK(pareto_front({}).empty());
}

TEST_CASE("pareto_front matches the brute-force filter on random points") {
  auto rng = make_rng(2024);
  std::uniform_real_distribution<double> f1(0.0, 1.0);
  std::uniform_int_distribution<uint64_t> flows(1, 2'000'000);
  std::vector<ParetoPoint> pts;
  for (size_t i = 0; i < 1000; ++i) pts.push_back({f1(rng), flows(rng), i});
  // a few exact duplicates and ties
  for (size_t i = 0; i < 20; ++i) {
    auto p = pts[i * 7];
    p.id = 1000 + i;
    pts.push_back(p);
  }
  auto fast = pareto_front(pts);
  auto slow = brute_force_front(pts);
  CHECK(as_set(fast) == as_set(slow));
  // sorted flows ascending with non-increasing f1
  for (size_t i = 1; i < fast.size(); ++i) {
    CHECK(fast[i].flows >= fast[i - 1].flows);
    CHECK(fast[i].f1 <= fast[i - 1].f1);
  }
}

TEST_CASE("evaluate: separable toy set is perfect and feasible") {
  auto ds = toy_separable_dataset();
  Candidate cand;
  cand.config = PartitionConfig{1, {1}, 1};
  cand.feature_width = 32;
  TargetProfile profile;
  auto env = ws_environment(10'000);
  auto res = evaluate(cand, ds, profile, env, 0.3, 42);
  CHECK_FALSE(res.failed);
  CHECK(res.f1 == 1.0);
  CHECK(res.feasible);
  CHECK(res.report.recirc_bps == 0.0);  // p=1
}

TEST_CASE("evaluate: a stage-starved profile reports reason=stages") {
  auto ds = toy_separable_dataset();
  Candidate cand;
  cand.config = PartitionConfig{1, {1}, 1};
  cand.feature_width = 32;
  TargetProfile profile;
  profile.num_stages = 5;  // dep(3) + tables(1) + bookkeeping(1) leaves none
  auto env = ws_environment(10'000);
  auto res = evaluate(cand, ds, profile, env, 0.3, 42);
  CHECK_FALSE(res.feasible);
  CHECK(res.infeasible_reason == "stages");
}

TEST_CASE("evaluate is deterministic for a fixed candidate and seed") {
  SynthSpec spec;
  spec.seed = 5;
  spec.flows_per_class = 30;
  auto ds = build_partitioned_dataset(synth_traces(spec), 2, default_catalog(), 32);
  Candidate cand;
  cand.config = PartitionConfig{3, {2, 1}, 3};
  cand.feature_width = 32;
  TargetProfile profile;
  auto env = hd_environment(10'000);
  auto a = evaluate(cand, ds, profile, env, 0.3, 7);
  auto b = evaluate(cand, ds, profile, env, 0.3, 7);
  CHECK(eval_to_json(a).dump() == eval_to_json(b).dump());
}

TEST_CASE("zero iteration budget produces an empty archive") {
  SearchSpace space;
  space.iterations = 0;
  SynthSpec spec;
  spec.flows_per_class = 5;
  auto traces = synth_traces(spec);
  TargetProfile profile;
  auto res = run_search(space, traces, profile, ws_environment(10'000));
  CHECK(res.archive.empty());
  CHECK(res.history.empty());
  CHECK(res.evaluations == 0);
}

TEST_CASE("search is a pure function of its seed") {
  SynthSpec spec;
  spec.seed = 9;
  spec.flows_per_class = 25;
  auto traces = synth_traces(spec);
  SearchSpace space;
  space.depth_max = 5;
  space.p_max = 4;
  space.k_min = 2;
  space.k_max = 4;
  space.iterations = 5;
  space.batch = 4;
  space.seed = 77;
  space.scenarios = {10'000};
  TargetProfile profile;
  auto env = ws_environment(10'000);

  auto r1 = run_search(space, traces, profile, env);
  auto r2 = run_search(space, traces, profile, env);
  REQUIRE(r1.history.size() == r2.history.size());
  std::ostringstream h1, h2, p1, p2;
  write_history_jsonl(h1, r1.history);
  write_history_jsonl(h2, r2.history);
  CHECK(h1.str() == h2.str());
  write_pareto_csv(p1, r1.archive);
  write_pareto_csv(p2, r2.archive);
  CHECK(p1.str() == p2.str());

  // parallel evaluation must not change anything
  auto r4 = run_search(space, traces, profile, env, default_catalog(), 4);
  std::ostringstream h4;
  write_history_jsonl(h4, r4.history);
  CHECK(h4.str() == h1.str());
}

TEST_CASE("search archive invariants") {
  SynthSpec spec;
  spec.seed = 13;
  spec.flows_per_class = 25;
  auto traces = synth_traces(spec);
  SearchSpace space;
  space.depth_max = 6;
  space.p_max = 4;
  space.iterations = 8;
  space.batch = 4;
  space.seed = 3;
  space.scenarios = {10'000};
  TargetProfile profile;
  auto env = hd_environment(10'000);
  auto res = run_search(space, traces, profile, env);
  REQUIRE_FALSE(res.archive.empty());
  CHECK(res.evaluations == 8 * 4);

  // every archived point is feasible under the gate and mutually non-dominated
  for (const auto& e : res.archive) {
    CHECK(e.flows >= 10'000);
    CHECK(e.f1 >= 0.0);
    CHECK(e.f1 <= 1.0);
  }
  for (size_t i = 0; i < res.archive.size(); ++i)
    for (size_t j = 0; j < res.archive.size(); ++j) {
      if (i == j) continue;
      bool ge = res.archive[j].f1 >= res.archive[i].f1 &&
                res.archive[j].flows >= res.archive[i].flows;
      bool strict = res.archive[j].f1 > res.archive[i].f1 ||
                    res.archive[j].flows > res.archive[i].flows;
      bool dominated = ge && strict;
      CHECK_FALSE(dominated);
    }
  for (size_t i = 1; i < res.archive.size(); ++i) {
    CHECK(res.archive[i].flows >= res.archive[i - 1].flows);
    CHECK(res.archive[i].f1 <= res.archive[i - 1].f1);
  }
  // every sampled candidate respected the composition constraint
  for (const auto& er : res.history) {
    uint32_t sum = 0;
    for (uint32_t s : er.candidate.config.partition_sizes) sum += s;
    CHECK(sum == er.candidate.config.total_depth);
  }
}

TEST_CASE("partitioned search beats the monolithic top-k baseline on synth") {
  SynthSpec spec;
  spec.seed = 17;
  spec.flows_per_class = 40;
  auto traces = synth_traces(spec);
  TargetProfile profile;
  auto env = ws_environment(10'000);

  SearchSpace space;
  space.depth_min = 1;
  space.depth_max = 6;
  space.k_min = 4;
  space.k_max = 4;
  space.p_min = 1;
  space.p_max = 4;
  space.iterations = 12;
  space.batch = 6;
  space.seed = 1;
  space.scenarios = {10'000};
  auto res = run_search(space, traces, profile, env);
  REQUIRE_FALSE(res.archive.empty());

  // monolithic top-4 baseline at its best depth, same split seed
  auto ds1 = build_partitioned_dataset(traces, 1, default_catalog(), 32);
  auto [train_idx, test_idx] = stratified_split(ds1, space.holdout, mix_seed(space.seed, 1));
  auto train = subset_dataset(ds1, train_idx);
  auto test = subset_dataset(ds1, test_idx);
  std::vector<Sample> train_samples;
  for (const auto& wf : train.flows)
    train_samples.push_back({wf.windows[0], wf.label});
  double best_base = 0.0;
  for (uint32_t depth = 1; depth <= 8; ++depth) {
    auto base = train_topk_baseline(train_samples, depth, 4);
    std::vector<uint32_t> y_true, y_pred;
    for (const auto& wf : test.flows) {
      y_true.push_back(wf.label);
      y_pred.push_back(predict(base, wf.windows[0]).second);
    }
    best_base = std::max(best_base, macro_f1(y_true, y_pred));
  }

  double best_archive = 0.0;
  for (const auto& e : res.archive) best_archive = std::max(best_archive, e.f1);
  CHECK(best_archive > best_base);
  CHECK(best_archive - best_base >= 0.05);
}
