#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "parttree/dtree.hpp"
#include "parttree/flowdata.hpp"
#include "parttree/partition.hpp"

namespace fs = std::filesystem;
using namespace parttree;

namespace {

const std::string kBin = PARTTREE_BIN;

int run(const std::string& args) {
  std::string cmd = kBin + " " + args + " >/dev/null 2>&1";
  int status = std::system(cmd.c_str());
  if (status == -1) return -1;
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) {
    path = fs::temp_directory_path() / ("parttree_test_" + name);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& f) const { return (path / f).string(); }
};

}  // namespace

TEST_CASE("full pipeline runs clean and artifacts exist") {
  TempDir dir("pipeline");
  std::string out = " --out-dir " + dir.path.string();
  REQUIRE(run("synth --seed 7 --flows-per-class 30" + out) == 0);
  REQUIRE(run("featurize --input " + (dir / "trace.csv") + " --partitions 4" + out) == 0);
  REQUIRE(run("train --dataset " + (dir / "dataset.csv") +
              " --depth 4 --sizes 1,1,1,1 --k 4" + out) == 0);
  REQUIRE(run("compile --model " + (dir / "model.json") + out) == 0);
  REQUIRE(run("estimate --model " + (dir / "model.json") + " --dataset " +
              (dir / "dataset.csv") + " --env HD --scenario 10000" + out) == 0);
  REQUIRE(run("simulate --model " + (dir / "model.json") + " --trace " +
              (dir / "trace.csv") + out) == 0);
  REQUIRE(run("report --stats " + (dir / "stats.json") + out) == 0);
  for (const char* f :
       {"trace.csv", "dataset.csv", "model.json", "rules.txt", "report.json",
        "stats.json", "ttd_pkts_cdf.csv", "ttd_us_cdf.csv",
        "recirc_summary.csv", "synth.manifest.json", "train.manifest.json"})
    CHECK(fs::exists(dir.path / f));

  // report totals reconcile (already checked by report; verify digests here)
  auto stats = nlohmann::json::parse(slurp(dir.path / "stats.json"));
  CHECK(stats.at("totals").at("digests").get<uint64_t>() == 120);
  CHECK(stats.at("totals").at("faults").get<uint64_t>() == 0);
}

TEST_CASE("simulate digests equal offline inference through the artifacts") {
  TempDir dir("oracle");
  std::string out = " --out-dir " + dir.path.string();
  REQUIRE(run("synth --seed 11 --flows-per-class 25" + out) == 0);
  REQUIRE(run("featurize --input " + (dir / "trace.csv") + " --partitions 4" + out) == 0);
  REQUIRE(run("train --dataset " + (dir / "dataset.csv") +
              " --depth 5 --sizes 2,1,1,1 --k 4" + out) == 0);
  REQUIRE(run("simulate --model " + (dir / "model.json") + " --trace " +
              (dir / "trace.csv") + out) == 0);

  auto model = model_from_json(nlohmann::json::parse(slurp(dir.path / "model.json")));
  auto ds = read_dataset_file(dir / "dataset.csv", 32);
  auto stats = nlohmann::json::parse(slurp(dir.path / "stats.json"));
  std::map<std::string, uint32_t> sim_class;
  for (const auto& row : stats.at("per_flow"))
    sim_class[row.at("id").get<std::string>()] = row.at("class").get<uint32_t>();
  size_t mismatches = 0;
  for (const auto& wf : ds.flows)
    if (sim_class.at(wf.flow_id) != infer_offline(model, wf.windows).label)
      ++mismatches;
  CHECK(mismatches == 0);
}

TEST_CASE("train on p=1 equals monolithic training") {
  TempDir dir("mono");
  std::string out = " --out-dir " + dir.path.string();
  REQUIRE(run("synth --seed 3 --flows-per-class 20" + out) == 0);
  REQUIRE(run("featurize --input " + (dir / "trace.csv") + " --partitions 1" + out) == 0);
  REQUIRE(run("train --dataset " + (dir / "dataset.csv") +
              " --depth 4 --sizes 4 --k 4" + out) == 0);
  auto model = model_from_json(nlohmann::json::parse(slurp(dir.path / "model.json")));
  REQUIRE(model.subtrees.size() == 1);

  auto ds = read_dataset_file(dir / "dataset.csv", 32);
  std::vector<Sample> samples;
  for (const auto& wf : ds.flows) samples.push_back({wf.windows[0], wf.label});
  auto mono = train_subtree(samples, 4, 4);
  CHECK(subtree_to_json(model.subtrees.at(1).tree).dump() ==
        subtree_to_json(mono).dump());
}

TEST_CASE("byte-identical outputs for identical seeds") {
  TempDir a("det_a"), b("det_b");
  auto runs = [&](const TempDir& dir) {
    std::string out = " --out-dir " + dir.path.string();
    REQUIRE(run("synth --seed 99 --flows-per-class 20" + out) == 0);
    REQUIRE(run("featurize --input " + (dir / "trace.csv") + " --partitions 2" + out) == 0);
    REQUIRE(run("train --dataset " + (dir / "dataset.csv") +
                " --depth 3 --sizes 2,1 --k 3" + out) == 0);
    REQUIRE(run("compile --model " + (dir / "model.json") + out) == 0);
  };
  runs(a);
  runs(b);
  for (const char* f : {"trace.csv", "dataset.csv", "model.json", "rules.txt"})
    CHECK(slurp(a.path / f) == slurp(b.path / f));
}

TEST_CASE("search twice with one seed produces identical pareto and history") {
  TempDir dir("search");
  std::string out = " --out-dir " + dir.path.string();
  REQUIRE(run("synth --seed 21 --flows-per-class 25" + out) == 0);
  {
    std::ofstream cfg(dir / "config.json");
    cfg << R"({
      "environment": {"name": "WS", "active_flows": 10000},
      "search": {"depth_min": 1, "depth_max": 5, "k_min": 2, "k_max": 4,
                 "p_min": 1, "p_max": 4, "iterations": 4, "batch": 4,
                 "scenarios": [10000]}
    })";
  }
  std::string search_cmd = "search --seed 7 --trace " + (dir / "trace.csv") +
                           " --config " + (dir / "config.json");
  TempDir r1("search_r1"), r2("search_r2");
  REQUIRE(run(search_cmd + " --out-dir " + r1.path.string()) == 0);
  REQUIRE(run(search_cmd + " --jobs 2 --out-dir " + r2.path.string()) == 0);
  CHECK(slurp(r1.path / "pareto.csv") == slurp(r2.path / "pareto.csv"));
  CHECK(slurp(r1.path / "history.jsonl") == slurp(r2.path / "history.jsonl"));
  CHECK_FALSE(slurp(r1.path / "pareto.csv").empty());
}

TEST_CASE("exit codes") {
  TempDir dir("exitcodes");
  std::string out = " --out-dir " + dir.path.string();

  SUBCASE("usage errors exit 1") {
    CHECK(run("train" + out) == 1);           // missing required options
    CHECK(run("no-such-subcommand" + out) == 1);
  }
  SUBCASE("missing and malformed inputs exit 2") {
    CHECK(run("featurize --input " + (dir / "nope.csv") + " --partitions 2" + out) == 2);
    {
      std::ofstream bad(dir / "bad.csv");
      bad << kTraceHeader << "\n";
      bad << "a,10.0.0.1,x,7000,80,6,0,0,A,fwd,1\n";  // size 0
    }
    CHECK(run("featurize --input " + (dir / "bad.csv") + " --partitions 2" + out) == 2);
  }
  SUBCASE("partition cap is enforced") {
    REQUIRE(run("synth --seed 5 --flows-per-class 4" + out) == 0);
    CHECK(run("featurize --input " + (dir / "trace.csv") + " --partitions 9" + out) == 2);
    CHECK(run("featurize --input " + (dir / "trace.csv") +
              " --partitions 9 --max-partitions 12" + out) == 0);
  }
  SUBCASE("config mismatch exits 2") {
    REQUIRE(run("synth --seed 5 --flows-per-class 6" + out) == 0);
    REQUIRE(run("featurize --input " + (dir / "trace.csv") + " --partitions 2" + out) == 0);
    // sizes sum != depth
    CHECK(run("train --dataset " + (dir / "dataset.csv") +
              " --depth 5 --sizes 2,2 --k 2" + out) == 2);
  }
  SUBCASE("corrupt stats fail the report reconciliation with exit 4") {
    REQUIRE(run("synth --seed 5 --flows-per-class 6" + out) == 0);
    REQUIRE(run("featurize --input " + (dir / "trace.csv") + " --partitions 2" + out) == 0);
    REQUIRE(run("train --dataset " + (dir / "dataset.csv") +
                " --depth 2 --sizes 1,1 --k 2" + out) == 0);
    REQUIRE(run("simulate --model " + (dir / "model.json") + " --trace " +
                (dir / "trace.csv") + out) == 0);
    auto j = nlohmann::json::parse(slurp(dir.path / "stats.json"));
    j["totals"]["recircs"] = j["totals"]["recircs"].get<uint64_t>() + 1;
    std::ofstream(dir / "stats.json") << j.dump(2);
    CHECK(run("report --stats " + (dir / "stats.json") + out) == 4);
  }
  SUBCASE("a search where nothing is feasible exits 3") {
    REQUIRE(run("synth --seed 5 --flows-per-class 6" + out) == 0);
    {
      std::ofstream cfg(dir / "config.json");
      cfg << R"({
        "environment": {"name": "WS", "active_flows": 50000000},
        "search": {"iterations": 2, "batch": 2, "scenarios": [50000000]}
      })";
    }
    CHECK(run("search --trace " + (dir / "trace.csv") + " --config " +
              (dir / "config.json") + out) == 3);
  }
}
