// parttree: partitioned decision trees for match-action pipelines.
//
// Wires the library into a batch workflow:
//   synth -> featurize -> train -> compile -> estimate -> simulate -> report
// plus `search` for the multi-objective design-space exploration.
//
// Exit codes: 0 ok, 1 usage, 2 input format, 3 infeasible-only search,
// 4 internal invariant violation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "parttree/dse.hpp"
#include "parttree/flowdata.hpp"
#include "parttree/partition.hpp"
#include "parttree/pipesim.hpp"
#include "parttree/resource.hpp"
#include "parttree/rulegen.hpp"
#include "parttree/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitInput = 2;
constexpr int kExitInfeasible = 3;
constexpr int kExitInternal = 4;

struct CommonOpts {
  std::string out_dir = ".";
  std::string config_path;
  uint64_t seed = 1;
};

// Atomic-ish artifact write: temp file in the target directory, then rename.
void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw parttree::error("cannot write '" + path.string() + "'");
    out << content;
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw parttree::parse_error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw parttree::parse_error("config '" + path + "': " + e.what());
  }
}

parttree::TargetProfile profile_from_config(const json& cfg) {
  if (cfg.contains("profile")) return parttree::profile_from_json(cfg.at("profile"));
  return parttree::TargetProfile{};
}

parttree::EnvironmentModel env_from_config(const json& cfg,
                                           const std::string& name_flag,
                                           uint64_t scenario_flag) {
  std::string name = name_flag;
  uint64_t flows = scenario_flag;
  if (cfg.contains("environment")) {
    const auto& e = cfg.at("environment");
    if (name.empty() && e.contains("name")) name = e.at("name").get<std::string>();
    if (flows == 0 && e.contains("active_flows"))
      flows = e.at("active_flows").get<uint64_t>();
    if (e.contains("mean_flow_duration_s")) {
      auto env = parttree::make_environment(name.empty() ? "WS" : name,
                                            flows ? flows : 100000);
      env.mean_flow_duration_s = e.at("mean_flow_duration_s").get<double>();
      return env;
    }
  }
  return parttree::make_environment(name.empty() ? "WS" : name,
                                    flows ? flows : 100000);
}

parttree::SearchSpace search_from_config(const json& cfg, uint64_t seed) {
  parttree::SearchSpace s;
  s.seed = seed;
  if (!cfg.contains("search")) return s;
  const auto& j = cfg.at("search");
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("depth_min", s.depth_min);
  get("depth_max", s.depth_max);
  get("k_min", s.k_min);
  get("k_max", s.k_max);
  get("p_min", s.p_min);
  get("p_max", s.p_max);
  get("feature_widths", s.feature_widths);
  get("scenarios", s.scenarios);
  get("iterations", s.iterations);
  get("batch", s.batch);
  get("fresh_ratio", s.fresh_ratio);
  get("holdout", s.holdout);
  if (j.contains("composition")) {
    std::string c = j.at("composition").get<std::string>();
    if (c == "random")
      s.composition = parttree::SearchSpace::Composition::random;
    else if (c == "balanced")
      s.composition = parttree::SearchSpace::Composition::balanced;
    else
      throw parttree::config_error("unknown composition '" + c + "'");
  }
  if (j.contains("seed"))
    throw parttree::config_error(
        "seed belongs on the command line (--seed), not in the config file");
  return s;
}

void write_manifest(const CommonOpts& common, const std::string& subcommand,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& artifacts) {
  ordered_json m;
  m["subcommand"] = subcommand;
  m["inputs"] = inputs;
  m["config"] = common.config_path;
  m["seed"] = common.seed;
  m["out_dir"] = common.out_dir;
  m["artifacts"] = artifacts;
  write_file(fs::path(common.out_dir) / (subcommand + ".manifest.json"),
             m.dump(2) + "\n");
}

fs::path out_path(const CommonOpts& common, const std::string& name) {
  return fs::path(common.out_dir) / name;
}

parttree::PartitionedModel load_model(const std::string& path) {
  try {
    return parttree::model_from_json(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw parttree::parse_error("model '" + path + "': " + e.what());
  }
}

// ---------------------------------------------------------------------------

int cmd_synth(const CommonOpts& common, uint64_t flows_per_class,
              uint32_t packets_per_flow) {
  parttree::SynthSpec spec;
  spec.seed = common.seed;
  spec.flows_per_class = static_cast<uint32_t>(flows_per_class);
  spec.packets_per_flow = packets_per_flow;
  auto flows = parttree::synth_traces(spec);
  std::ostringstream out;
  parttree::write_trace_stream(out, flows);
  auto path = out_path(common, "trace.csv");
  write_file(path, out.str());
  write_manifest(common, "synth", {}, {path.string()});
  std::cout << "synth: wrote " << flows.size() << " flows ("
            << flows.size() * packets_per_flow << " packets) to " << path.string()
            << "\n";
  return kExitOk;
}

int cmd_featurize(const CommonOpts& common, const std::string& input,
                  unsigned partitions, unsigned max_partitions,
                  unsigned bit_width) {
  parttree::WindowSpec spec{partitions, max_partitions};
  spec.validate();
  auto flows = parttree::ingest_trace_file(input);
  if (flows.empty()) throw parttree::config_error("trace has no flows");
  auto ds = parttree::build_partitioned_dataset(flows, partitions,
                                                parttree::default_catalog(),
                                                bit_width);
  std::ostringstream out;
  parttree::write_dataset_stream(out, ds);
  auto path = out_path(common, "dataset.csv");
  write_file(path, out.str());
  write_manifest(common, "featurize", {input}, {path.string()});
  size_t short_flows = 0;
  for (const auto& f : flows) short_flows += f.is_short(partitions);
  std::cout << "featurize: " << ds.flows.size() << " flows x " << ds.p
            << " windows x " << ds.num_features() << " features ("
            << short_flows << " short) -> " << path.string() << "\n";
  return kExitOk;
}

int cmd_train(const CommonOpts& common, const std::string& dataset_path,
              unsigned bit_width, uint32_t depth,
              const std::vector<uint32_t>& sizes, uint32_t k) {
  auto ds = parttree::read_dataset_file(dataset_path, bit_width);
  parttree::PartitionConfig cfg{depth, sizes, k};
  auto model = parttree::train_partitioned(ds, cfg);
  auto path = out_path(common, "model.json");
  write_file(path, parttree::model_to_json(model).dump(2) + "\n");
  write_manifest(common, "train", {dataset_path}, {path.string()});
  auto exits = parttree::exit_counts(model);
  std::cout << "train: " << model.subtrees.size() << " subtrees, "
            << model.routing.size() << " routing entries, exits "
            << exits.early_above_cap << " early / " << exits.pure_at_cap
            << " pure-at-cap / " << exits.final_partition << " final -> "
            << path.string() << "\n";
  return kExitOk;
}

int cmd_compile(const CommonOpts& common, const std::string& model_path,
                unsigned sid_bits) {
  auto model = load_model(model_path);
  auto tables = parttree::compile_model(model, sid_bits);
  std::ostringstream out;
  parttree::dump_rules(out, tables);
  auto path = out_path(common, "rules.txt");
  write_file(path, out.str());
  write_manifest(common, "compile", {model_path}, {path.string()});
  std::cout << "compile: " << tables.feature_entry_count() << " feature + "
            << tables.model_entry_count() << " model entries, model key "
            << tables.model_key_width() << " bits -> " << path.string() << "\n";
  return kExitOk;
}

int cmd_estimate(const CommonOpts& common, const std::string& model_path,
                 const std::string& dataset_path, const std::string& env_name,
                 uint64_t scenario) {
  auto cfg = load_config(common.config_path);
  auto profile = profile_from_config(cfg);
  auto env = env_from_config(cfg, env_name, scenario);
  auto model = load_model(model_path);
  auto tables = parttree::compile_model(model, profile.sid_bits);
  auto rep = parttree::estimate(tables, model.config, profile,
                                model.feature_width);

  std::vector<double> exits(model.config.p(), 0.0);
  if (!dataset_path.empty()) {
    auto ds = parttree::read_dataset_file(dataset_path, model.feature_width);
    exits = parttree::measured_exit_fractions(model, ds);
  }
  rep.recirc_bps = parttree::estimate_recirc(model.config, env, exits,
                                             profile.control_packet_bits);
  auto verdict = parttree::check_feasibility(rep, profile, env.active_flows);

  ordered_json j = parttree::report_to_json(rep);
  j["profile"] = profile.name;
  j["environment"] = env.name;
  j["scenario_flows"] = env.active_flows;
  j["feasible"] = verdict.feasible;
  j["reason"] = verdict.reason;
  auto path = out_path(common, "report.json");
  write_file(path, j.dump(2) + "\n");
  std::vector<std::string> inputs = {model_path};
  if (!dataset_path.empty()) inputs.push_back(dataset_path);
  write_manifest(common, "estimate", inputs, {path.string()});
  std::cout << "estimate: " << rep.tcam_entries << " TCAM entries, "
            << rep.tcam_bits << " bits, " << rep.flows_supported
            << " flows supported, "
            << (verdict.feasible ? "feasible" : "infeasible(" + verdict.reason + ")")
            << " -> " << path.string() << "\n";
  return kExitOk;
}

int cmd_simulate(const CommonOpts& common, const std::string& model_path,
                 const std::string& trace_path, size_t hash_slots,
                 uint64_t window_len, const std::string& debug_log) {
  auto cfg = load_config(common.config_path);
  auto profile = profile_from_config(cfg);
  auto model = load_model(model_path);
  auto sim_cfg = parttree::make_sim_config(
      model, parttree::compile_model(model, profile.sid_bits));
  sim_cfg.control_packet_bits = profile.control_packet_bits;
  if (hash_slots > 0) {
    sim_cfg.indexing = parttree::IndexingMode::hashed;
    sim_cfg.hash_slots = hash_slots;
  }
  if (window_len > 0) {
    sim_cfg.window_mode = parttree::WindowMode::fixed;
    sim_cfg.fixed_window_len = window_len;
  }

  auto flows = parttree::ingest_trace_file(trace_path);
  auto events = parttree::events_from_traces(flows);

  std::ofstream debug;
  std::ostream* debug_os = nullptr;
  if (!debug_log.empty()) {
    debug.open(debug_log);
    if (!debug) throw parttree::error("cannot write debug log '" + debug_log + "'");
    debug_os = &debug;
  }
  auto stats = parttree::run_trace(sim_cfg, events, debug_os);

  auto path = out_path(common, "stats.json");
  write_file(path, parttree::stats_to_json(stats).dump(2) + "\n");
  write_manifest(common, "simulate", {model_path, trace_path}, {path.string()});
  std::cout << "simulate: " << stats.flows << " flows, " << stats.digests
            << " digests (" << stats.partial_digests << " partial), "
            << stats.recircs_total << " recircs, " << stats.collisions
            << " collisions, " << stats.faults << " faults -> " << path.string()
            << "\n";
  if (stats.faults > 0) return kExitInternal;
  return kExitOk;
}

int cmd_search(const CommonOpts& common, const std::string& trace_path,
               unsigned jobs) {
  auto cfg = load_config(common.config_path);
  auto profile = profile_from_config(cfg);
  auto env = env_from_config(cfg, "", 0);
  auto space = search_from_config(cfg, common.seed);

  auto flows = parttree::ingest_trace_file(trace_path);
  if (flows.empty()) throw parttree::config_error("trace has no flows");
  auto res = parttree::run_search(space, flows, profile, env,
                                  parttree::default_catalog(), jobs);

  std::ostringstream pareto, history;
  parttree::write_pareto_csv(pareto, res.archive);
  parttree::write_history_jsonl(history, res.history);
  auto pareto_path = out_path(common, "pareto.csv");
  auto history_path = out_path(common, "history.jsonl");
  write_file(pareto_path, pareto.str());
  write_file(history_path, history.str());
  write_manifest(common, "search", {trace_path},
                 {pareto_path.string(), history_path.string()});

  size_t feasible = 0;
  for (const auto& er : res.history) feasible += er.feasible;
  std::cout << "search: " << res.evaluations << " evaluations, " << feasible
            << " feasible, archive " << res.archive.size() << " points -> "
            << pareto_path.string() << "\n";
  for (const auto& e : res.archive) {
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "  flows=%llu f1=%.4f D=%u k=%u sizes=%s",
                  static_cast<unsigned long long>(e.flows), e.f1,
                  e.candidate.config.total_depth, e.candidate.config.k,
                  e.candidate.config.sizes_string().c_str());
    std::cout << buf << "\n";
  }
  if (res.evaluations > 0 && res.archive.empty()) return kExitInfeasible;
  return kExitOk;
}

int cmd_report(const CommonOpts& common, const std::string& stats_path,
               const std::string& pareto_path) {
  std::vector<std::string> inputs, artifacts;
  if (stats_path.empty() && pareto_path.empty())
    throw parttree::config_error("report needs --stats and/or --pareto");

  if (!stats_path.empty()) {
    inputs.push_back(stats_path);
    json j;
    try {
      j = json::parse(read_file(stats_path));
    } catch (const json::exception& e) {
      throw parttree::parse_error("stats '" + stats_path + "': " + e.what());
    }
    uint64_t recirc_sum = 0;
    std::vector<uint64_t> ttd_pkts, ttd_us;
    for (const auto& row : j.at("per_flow")) {
      recirc_sum += row.at("recircs").get<uint64_t>();
      if (row.at("classified").get<bool>()) {
        ttd_pkts.push_back(row.at("ttd_pkts").get<uint64_t>());
        ttd_us.push_back(row.at("ttd_us").get<uint64_t>());
      }
    }
    const auto& totals = j.at("totals");
    if (recirc_sum != totals.at("recircs").get<uint64_t>())
      throw parttree::integrity_error("per-flow recirculations do not sum to the total");
    if (ttd_pkts.size() != totals.at("digests").get<uint64_t>())
      throw parttree::integrity_error("classified flows do not match the digest total");

    auto cdf_csv = [](const std::vector<std::pair<uint64_t, double>>& cdf,
                      const char* col) {
      std::ostringstream out;
      out << col << ",cdf\n";
      char buf[64];
      for (const auto& [v, f] : cdf) {
        std::snprintf(buf, sizeof buf, "%llu,%.6f",
                      static_cast<unsigned long long>(v), f);
        out << buf << "\n";
      }
      return out.str();
    };
    auto p1 = out_path(common, "ttd_pkts_cdf.csv");
    auto p2 = out_path(common, "ttd_us_cdf.csv");
    write_file(p1, cdf_csv(parttree::ttd_cdf(ttd_pkts), "ttd_pkts"));
    write_file(p2, cdf_csv(parttree::ttd_cdf(ttd_us), "ttd_us"));

    std::ostringstream recirc;
    recirc << "flows,digests,partial_digests,recircs,control_bits,faults,"
              "collisions\n"
           << totals.at("flows").get<uint64_t>() << ','
           << totals.at("digests").get<uint64_t>() << ','
           << totals.at("partial_digests").get<uint64_t>() << ','
           << totals.at("recircs").get<uint64_t>() << ','
           << totals.at("control_bits").get<uint64_t>() << ','
           << totals.at("faults").get<uint64_t>() << ','
           << j.at("collisions").get<uint64_t>() << "\n";
    auto p3 = out_path(common, "recirc_summary.csv");
    write_file(p3, recirc.str());
    artifacts.insert(artifacts.end(),
                     {p1.string(), p2.string(), p3.string()});
  }

  if (!pareto_path.empty()) {
    inputs.push_back(pareto_path);
    std::string content = read_file(pareto_path);
    std::istringstream in(content);
    std::string line;
    std::getline(in, line);
    if (line != "flows,f1,D,k,sizes,tcam_entries,register_bits")
      throw parttree::parse_error("pareto '" + pareto_path + "': bad header");
    uint64_t prev_flows = 0;
    double prev_f1 = 2.0;
    bool first = true;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto f = parttree::split_csv_line(line);
      if (f.size() != 7)
        throw parttree::parse_error("pareto row with wrong field count");
      uint64_t flows = std::stoull(f[0]);
      double f1 = std::stod(f[1]);
      if (!first && (flows < prev_flows || f1 > prev_f1))
        throw parttree::integrity_error("pareto front is not monotone");
      prev_flows = flows;
      prev_f1 = f1;
      first = false;
    }
    auto p = out_path(common, "pareto.csv");
    if (fs::absolute(p) != fs::absolute(pareto_path)) write_file(p, content);
    artifacts.push_back(p.string());
  }

  write_manifest(common, "report", inputs, artifacts);
  std::cout << "report: wrote " << artifacts.size() << " plot files to "
            << common.out_dir << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"partitioned decision trees for match-action pipelines"};
  app.require_subcommand(1);
  app.fallthrough();

  CommonOpts common;
  app.add_option("--out-dir", common.out_dir, "output directory")
      ->capture_default_str();
  app.add_option("--config", common.config_path,
                 "JSON config (profile / environment / search)");
  app.add_option("--seed", common.seed, "master seed for all randomness")
      ->capture_default_str();

  // synth
  uint64_t flows_per_class = 150;
  uint32_t packets_per_flow = 16;
  auto* synth = app.add_subcommand("synth", "generate the seeded synthetic trace");
  synth->add_option("--flows-per-class", flows_per_class)->capture_default_str();
  synth->add_option("--packets-per-flow", packets_per_flow)->capture_default_str();

  // featurize
  std::string input;
  unsigned partitions = 1, max_partitions = 7, bit_width = 32;
  auto* featurize =
      app.add_subcommand("featurize", "window a trace into per-partition features");
  featurize->add_option("--input", input, "flow-trace CSV")->required();
  featurize->add_option("--partitions", partitions, "windows per flow")->required();
  featurize->add_option("--max-partitions", max_partitions)->capture_default_str();
  featurize->add_option("--bit-width", bit_width, "feature precision (8/16/32)")
      ->capture_default_str();

  // train
  std::string dataset_path;
  uint32_t depth = 1, k = 1;
  std::vector<uint32_t> sizes;
  auto* train = app.add_subcommand("train", "train a partitioned tree");
  train->add_option("--dataset", dataset_path, "featurized dataset CSV")->required();
  train->add_option("--depth", depth, "total tree depth D")->required();
  train->add_option("--sizes", sizes, "partition sizes, e.g. --sizes 2 3 1")
      ->required()
      ->delimiter(',');
  train->add_option("--k", k, "features per subtree")->required();
  train->add_option("--bit-width", bit_width)->capture_default_str();

  // compile
  std::string model_path;
  unsigned sid_bits = 8;
  auto* compile = app.add_subcommand("compile", "emit ternary match-action rules");
  compile->add_option("--model", model_path, "model JSON")->required();
  compile->add_option("--sid-bits", sid_bits)->capture_default_str();

  // estimate
  std::string est_dataset, env_name;
  uint64_t scenario = 0;
  auto* estimate = app.add_subcommand("estimate", "hardware resource estimate");
  estimate->add_option("--model", model_path, "model JSON")->required();
  estimate->add_option("--dataset", est_dataset,
                       "dataset CSV for measured exit fractions");
  estimate->add_option("--env", env_name, "environment preset (WS or HD)");
  estimate->add_option("--scenario", scenario, "required concurrent flows");

  // simulate
  std::string trace_path, debug_log;
  size_t hash_slots = 0;
  uint64_t window_len = 0;
  auto* simulate = app.add_subcommand("simulate", "run the pipeline simulator");
  simulate->add_option("--model", model_path, "model JSON")->required();
  simulate->add_option("--trace", trace_path, "flow-trace CSV")->required();
  simulate->add_option("--hash-slots", hash_slots,
                       "CRC32-indexed register slots (0 = exact indexing)");
  simulate->add_option("--window-len", window_len,
                       "count-only window length (0 = declared flow sizes)");
  simulate->add_option("--debug-log", debug_log, "per-event line-protocol log");

  // search
  unsigned jobs = 1;
  auto* search = app.add_subcommand("search", "design-space exploration");
  search->add_option("--trace", trace_path, "flow-trace CSV")->required();
  search->add_option("--jobs", jobs, "parallel evaluations")->capture_default_str();

  // report
  std::string stats_path, pareto_path;
  auto* report = app.add_subcommand("report", "plot-ready CSVs from run outputs");
  report->add_option("--stats", stats_path, "simulator stats JSON");
  report->add_option("--pareto", pareto_path, "search pareto CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    fs::create_directories(common.out_dir);
    if (synth->parsed())
      return cmd_synth(common, flows_per_class, packets_per_flow);
    if (featurize->parsed())
      return cmd_featurize(common, input, partitions, max_partitions, bit_width);
    if (train->parsed())
      return cmd_train(common, dataset_path, bit_width, depth, sizes, k);
    if (compile->parsed()) return cmd_compile(common, model_path, sid_bits);
    if (estimate->parsed())
      return cmd_estimate(common, model_path, est_dataset, env_name, scenario);
    if (simulate->parsed())
      return cmd_simulate(common, model_path, trace_path, hash_slots,
                          window_len, debug_log);
    if (search->parsed()) return cmd_search(common, trace_path, jobs);
    if (report->parsed()) return cmd_report(common, stats_path, pareto_path);
  } catch (const parttree::integrity_error& e) {
    std::cerr << "integrity error: " << e.what() << "\n";
    return kExitInternal;
  } catch (const parttree::parse_error& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const parttree::config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitUsage;
}
