#include <map>
#include <sstream>

#include "doctest.h"
#include "parttree/flowdata.hpp"

using namespace parttree;

namespace {

std::vector<FlowTrace> random_flows(uint64_t seed, size_t n_flows,
                                    size_t max_pkts) {
  auto rng = make_rng(seed);
  std::uniform_int_distribution<uint64_t> iat(0, 5000);
  std::uniform_int_distribution<uint32_t> size(1, 1500);
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_int_distribution<int> flagbits(0, 31);
  std::uniform_int_distribution<size_t> pkts(1, max_pkts);

  std::vector<FlowTrace> flows;
  for (size_t i = 0; i < n_flows; ++i) {
    FlowTrace tr;
    tr.flow_id = "r" + std::to_string(i);
    tr.label = static_cast<uint32_t>(i % 3);
    tr.key = {"10.0.0." + std::to_string(i % 250 + 1), "10.1.0.1",
              static_cast<uint16_t>(1000 + i), 80, 6};
    uint64_t ts = 0;
    size_t n = pkts(rng);
    for (size_t j = 0; j < n; ++j) {
      PacketRecord p;
      p.ts_us = ts;
      ts += iat(rng);
      p.size = size(rng);
      p.flags = static_cast<uint8_t>(flagbits(rng));
      p.dir = coin(rng) ? Direction::fwd : Direction::bwd;
      tr.packets.push_back(p);
    }
    flows.push_back(std::move(tr));
  }
  return flows;
}

}  // namespace

TEST_CASE("trace ingestion groups packets by 5-tuple") {
  std::istringstream in(
      "flow_id,src,dst,sport,dport,proto,ts_us,size,flags,dir,label\n"
      "a,10.0.0.1,10.0.0.2,1000,80,6,0,100,S,fwd,1\n"
      "a,10.0.0.1,10.0.0.2,1000,80,6,50,200,A,bwd,1\n");
  auto flows = ingest_trace_stream(in);
  REQUIRE(flows.size() == 1);
  CHECK(flows[0].packets.size() == 2);
  CHECK(flows[0].flow_id == "a");
  CHECK(flows[0].label == 1);
  CHECK(flows[0].packets[0].size == 100);
  CHECK((flows[0].packets[0].flags & FLAG_SYN));
}

TEST_CASE("zero packet size is rejected with the line number") {
  std::istringstream in(
      "flow_id,src,dst,sport,dport,proto,ts_us,size,flags,dir,label\n"
      "a,10.0.0.1,10.0.0.2,1000,80,6,0,100,S,fwd,1\n"
      "a,10.0.0.1,10.0.0.2,1000,80,6,10,0,A,fwd,1\n");
  CHECK_THROWS_WITH_AS(ingest_trace_stream(in), "line 3: size must be > 0",
                       parse_error);
}

TEST_CASE("empty input yields an empty flow list") {
  std::istringstream empty("");
  CHECK(ingest_trace_stream(empty).empty());
  std::istringstream header_only(
      "flow_id,src,dst,sport,dport,proto,ts_us,size,flags,dir,label\n");
  CHECK(ingest_trace_stream(header_only).empty());
}

TEST_CASE("malformed rows report their line") {
  std::istringstream bad_dir(
      "flow_id,src,dst,sport,dport,proto,ts_us,size,flags,dir,label\n"
      "a,10.0.0.1,10.0.0.2,1000,80,6,0,100,S,sideways,1\n");
  CHECK_THROWS_AS(ingest_trace_stream(bad_dir), parse_error);
  std::istringstream bad_flag(
      "flow_id,src,dst,sport,dport,proto,ts_us,size,flags,dir,label\n"
      "a,10.0.0.1,10.0.0.2,1000,80,6,0,100,Q,fwd,1\n");
  CHECK_THROWS_AS(ingest_trace_stream(bad_flag), parse_error);
  std::istringstream label_conflict(
      "flow_id,src,dst,sport,dport,proto,ts_us,size,flags,dir,label\n"
      "a,10.0.0.1,10.0.0.2,1000,80,6,0,100,A,fwd,1\n"
      "a,10.0.0.1,10.0.0.2,1000,80,6,9,100,A,fwd,2\n");
  CHECK_THROWS_AS(ingest_trace_stream(label_conflict), parse_error);
}

TEST_CASE("interleaved flows match a brute-force group-and-sort oracle") {
  // 3 flows x 3 packets interleaved, timestamps deliberately out of file
  // order within each flow.
  struct Row {
    std::string id;
    uint16_t sport;
    uint64_t ts;
    uint32_t size;
  };
  std::vector<Row> rows = {
      {"x", 1000, 30, 11}, {"y", 1001, 5, 21},  {"z", 1002, 80, 31},
      {"x", 1000, 10, 12}, {"z", 1002, 40, 32}, {"y", 1001, 90, 22},
      {"y", 1001, 50, 23}, {"x", 1000, 70, 13}, {"z", 1002, 60, 33},
  };
  std::ostringstream csv;
  csv << kTraceHeader << "\n";
  for (const auto& r : rows)
    csv << r.id << ",10.0.0.1,10.0.0.2," << r.sport << ",80,6," << r.ts << ','
        << r.size << ",A,fwd,0\n";

  std::istringstream in(csv.str());
  auto flows = ingest_trace_stream(in);
  REQUIRE(flows.size() == 3);

  // oracle: naive grouping + sort
  std::map<uint16_t, std::vector<Row>> oracle;
  for (const auto& r : rows) oracle[r.sport].push_back(r);
  for (auto& [sport, group] : oracle)
    std::sort(group.begin(), group.end(),
              [](const Row& a, const Row& b) { return a.ts < b.ts; });

  for (const auto& tr : flows) {
    const auto& group = oracle.at(tr.key.sport);
    REQUIRE(tr.packets.size() == group.size());
    for (size_t i = 0; i < group.size(); ++i) {
      CHECK(tr.packets[i].ts_us == group[i].ts);
      CHECK(tr.packets[i].size == group[i].size);
    }
  }
}

TEST_CASE("window boundaries follow the ceil rule") {
  CHECK(window_boundaries(8, 4) == std::vector<uint64_t>{2, 4, 6, 8});
  CHECK(window_boundaries(10, 4) == std::vector<uint64_t>{3, 5, 8, 10});
  CHECK(window_boundaries(2, 4) == std::vector<uint64_t>{1, 1, 2, 2});
  CHECK(window_boundaries(1, 1) == std::vector<uint64_t>{1});

  // independent oracle: smallest b with b*p >= j*F
  auto rng = make_rng(99);
  std::uniform_int_distribution<uint64_t> fdist(1, 200);
  std::uniform_int_distribution<unsigned> pdist(1, 7);
  for (int t = 0; t < 500; ++t) {
    uint64_t F = fdist(rng);
    unsigned p = pdist(rng);
    auto b = window_boundaries(F, p);
    REQUIRE(b.size() == p);
    for (unsigned j = 1; j <= p; ++j) {
      uint64_t want = 0;
      while (want * p < j * F) ++want;
      CHECK(b[j - 1] == want);
    }
    CHECK(b.back() == F);
    for (unsigned j = 1; j < p; ++j) CHECK(b[j] >= b[j - 1]);
    if (F >= p) {
      uint64_t prev = 0;
      for (uint64_t x : b) {
        CHECK(x > prev);  // every window non-empty
        prev = x;
      }
    }
  }
}

TEST_CASE("window features: single packet") {
  std::vector<PacketRecord> pkts = {{0, 100, FLAG_SYN, Direction::fwd}};
  auto v = compute_window_features(pkts, default_catalog(), 32);
  CHECK(v[F_PKT_COUNT] == 1);
  CHECK(v[F_BYTE_SUM] == 100);
  CHECK(v[F_MEAN_SIZE] == 100);
  CHECK(v[F_MEAN_IAT] == 0);
  CHECK(v[F_MIN_SIZE] == 100);
  CHECK(v[F_MAX_SIZE] == 100);
  CHECK(v[F_SYN_COUNT] == 1);
  CHECK(v[F_DURATION] == 0);
}

TEST_CASE("window features: arithmetic over three packets") {
  std::vector<PacketRecord> pkts = {{0, 100, 0, Direction::fwd},
                                    {10000, 200, 0, Direction::fwd},
                                    {30000, 300, 0, Direction::bwd}};
  auto v = compute_window_features(pkts, default_catalog(), 32);
  CHECK(v[F_MEAN_SIZE] == 200);
  CHECK(v[F_MEAN_IAT] == 15000);
  CHECK(v[F_MAX_IAT] == 20000);
  CHECK(v[F_MIN_IAT] == 10000);
  CHECK(v[F_DURATION] == 30000);
  CHECK(v[F_FWD_COUNT] == 2);
  CHECK(v[F_BWD_COUNT] == 1);
  CHECK(v[F_MEAN_FWD_SIZE] == 150);
  // var of {10000, 20000}: mean 15000, E[x^2] = 250e6 -> var 25e6
  CHECK(v[F_VAR_IAT] == 25000000);
}

TEST_CASE("window features saturate at the bit-width maximum") {
  std::vector<PacketRecord> pkts = {{0, 100, 0, Direction::fwd},
                                    {70000, 100, 0, Direction::fwd}};
  auto v16 = compute_window_features(pkts, default_catalog(), 16);
  CHECK(v16[F_MEAN_IAT] == 65535);
  auto v32 = compute_window_features(pkts, default_catalog(), 32);
  CHECK(v32[F_MEAN_IAT] == 70000);
  auto v8 = compute_window_features(pkts, default_catalog(), 8);
  CHECK(v8[F_BYTE_SUM] == 200);
  CHECK(v8[F_MEAN_IAT] == 255);
}

TEST_CASE("empty window yields the all-zero vector") {
  std::vector<PacketRecord> none;
  auto v = compute_window_features(none, default_catalog(), 32);
  for (uint64_t x : v) CHECK(x == 0);
}

TEST_CASE("dataset build: sample counts and ordering") {
  auto flows = random_flows(7, 10, 20);
  auto ds = build_partitioned_dataset(flows, 4, default_catalog(), 32);
  CHECK(ds.flows.size() == 10);
  size_t samples = 0;
  for (const auto& wf : ds.flows) {
    REQUIRE(wf.windows.size() == 4);
    samples += wf.windows.size();
  }
  CHECK(samples == 40);
  for (size_t i = 1; i < ds.flows.size(); ++i)
    CHECK(ds.flows[i - 1].flow_id < ds.flows[i].flow_id);
}

TEST_CASE("p=1 windowing is the identity over whole-flow statistics") {
  auto flows = random_flows(11, 6, 15);
  auto ds = build_partitioned_dataset(flows, 1, default_catalog(), 32);
  for (const auto& wf : ds.flows) {
    const FlowTrace* tr = nullptr;
    for (const auto& f : flows)
      if (f.flow_id == wf.flow_id) tr = &f;
    REQUIRE(tr != nullptr);
    auto whole = compute_window_features(tr->packets, default_catalog(), 32);
    CHECK(wf.windows[0] == whole);
  }
}

TEST_CASE("count/sum features are additive across window refinements") {
  const std::vector<size_t> additive = {F_PKT_COUNT, F_BYTE_SUM, F_SYN_COUNT,
                                        F_FIN_COUNT, F_RST_COUNT, F_FWD_COUNT,
                                        F_BWD_COUNT};
  auto flows = random_flows(13, 8, 24);
  auto ds1 = build_partitioned_dataset(flows, 1, default_catalog(), 32);
  auto ds2 = build_partitioned_dataset(flows, 2, default_catalog(), 32);
  auto ds4 = build_partitioned_dataset(flows, 4, default_catalog(), 32);
  for (size_t i = 0; i < ds1.flows.size(); ++i) {
    for (size_t f : additive) {
      uint64_t whole = ds1.flows[i].windows[0][f];
      uint64_t sum2 = ds2.flows[i].windows[0][f] + ds2.flows[i].windows[1][f];
      uint64_t sum4 = 0;
      for (int w = 0; w < 4; ++w) sum4 += ds4.flows[i].windows[w][f];
      CHECK(whole == sum2);
      CHECK(whole == sum4);
      // window 0 of p=2 covers exactly windows 0+1 of p=4
      CHECK(ds2.flows[i].windows[0][f] ==
            ds4.flows[i].windows[0][f] + ds4.flows[i].windows[1][f]);
    }
  }
}

TEST_CASE("feature values stay within the configured width") {
  auto flows = random_flows(17, 10, 30);
  for (unsigned width : {8u, 16u, 32u}) {
    auto ds = build_partitioned_dataset(flows, 3, default_catalog(), width);
    for (const auto& wf : ds.flows)
      for (const auto& w : wf.windows)
        for (uint64_t v : w) CHECK(v <= width_max(width));
  }
}

TEST_CASE("featurization is deterministic") {
  auto flows = random_flows(23, 12, 18);
  auto a = build_partitioned_dataset(flows, 4, default_catalog(), 32);
  auto b = build_partitioned_dataset(flows, 4, default_catalog(), 32);
  std::ostringstream sa, sb;
  write_dataset_stream(sa, a);
  write_dataset_stream(sb, b);
  CHECK(sa.str() == sb.str());
}

TEST_CASE("dataset CSV round-trips") {
  auto flows = random_flows(29, 5, 12);
  auto ds = build_partitioned_dataset(flows, 2, default_catalog(), 32);
  std::ostringstream out;
  write_dataset_stream(out, ds);
  std::istringstream in(out.str());
  auto ds2 = read_dataset_stream(in, 32);
  REQUIRE(ds2.flows.size() == ds.flows.size());
  CHECK(ds2.p == ds.p);
  for (size_t i = 0; i < ds.flows.size(); ++i) {
    CHECK(ds2.flows[i].flow_id == ds.flows[i].flow_id);
    CHECK(ds2.flows[i].label == ds.flows[i].label);
    CHECK(ds2.flows[i].windows == ds.flows[i].windows);
  }
}

TEST_CASE("short flows still produce p flagged samples") {
  FlowTrace tr;
  tr.flow_id = "s";
  tr.label = 0;
  tr.key = {"a", "b", 1, 2, 6};
  tr.packets = {{0, 10, 0, Direction::fwd}, {5, 10, 0, Direction::fwd}};
  auto ds = build_partitioned_dataset({tr}, 4, default_catalog(), 32);
  REQUIRE(ds.flows.size() == 1);
  REQUIRE(ds.flows[0].windows.size() == 4);
  CHECK(tr.is_short(4));
  int empty = 0;
  for (bool e : ds.flows[0].empty_window) empty += e;
  CHECK(empty == 2);
  CHECK_FALSE(ds.flows[0].empty_window[0]);  // ceil puts packets early
  CHECK(ds.flows[0].empty_window[1]);
}

TEST_CASE("window spec validates the partition cap") {
  WindowSpec ok{4, 7};
  CHECK_NOTHROW(ok.validate());
  WindowSpec over{8, 7};
  CHECK_THROWS_AS(over.validate(), config_error);
  WindowSpec raised{8, 10};
  CHECK_NOTHROW(raised.validate());
}
