#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "parttree/flowdata.hpp"
#include "parttree/partition.hpp"
#include "parttree/rulegen.hpp"

namespace parttree {

// Analytical stand-in for a target-specific resource model. The defaults
// describe a Tofino1-class device (12 stages, 6.4 Mbit TCAM, 100 Gb/s
// recirculation); register_bits_per_stage is calibrated so that a nominal
// k=4 deployment supports ~100K flows and k=6 ~65K.
struct TargetProfile {
  std::string name = "tofino1-class";
  unsigned num_stages = 12;
  uint64_t tcam_bits_total = 6'400'000;
  unsigned tcam_block_bits = 64;  // entry cost = key+mask rounded up to this
  uint64_t register_bits_per_stage = 2'085'000;
  unsigned max_parallel_tables_per_stage = 16;
  unsigned stage_key_bits = 2048;
  double recirc_bandwidth_bps = 100e9;
  unsigned control_packet_bits = 512;  // one minimum-size control frame
  unsigned sid_bits = 8;
  unsigned counter_bits = 16;
  unsigned dep_chain_stages = 3;
  unsigned intermediate_register_bits = 32;
  unsigned op_table_guard_bits = 8;  // flag/direction match fields

  // TCAM entry cost for a given match key width (value + mask, rounded to
  // block granularity).
  uint64_t tcam_entry_cost(unsigned key_width) const {
    uint64_t raw = 2ull * key_width;
    return (raw + tcam_block_bits - 1) / tcam_block_bits * tcam_block_bits;
  }
};

struct EnvironmentModel {
  std::string name = "WS";
  double mean_flow_duration_s = 256.0 / 3.0;
  uint64_t active_flows = 100'000;

  double arrival_rate_fps() const { return active_flows / mean_flow_duration_s; }
};

// Calibrated datacenter workload presets: WS carries long-lived flows, HD
// short bursty ones (roughly half the WS duration).
inline EnvironmentModel ws_environment(uint64_t active_flows) {
  return EnvironmentModel{"WS", 256.0 / 3.0, active_flows};
}
inline EnvironmentModel hd_environment(uint64_t active_flows) {
  return EnvironmentModel{"HD", 40.96, active_flows};
}

inline EnvironmentModel make_environment(const std::string& name,
                                         uint64_t active_flows) {
  if (name == "WS") return ws_environment(active_flows);
  if (name == "HD") return hd_environment(active_flows);
  throw config_error("unknown environment '" + name + "' (use WS or HD)");
}

struct ResourceReport {
  uint64_t tcam_entries = 0;
  uint64_t tcam_bits = 0;
  uint64_t feature_register_bits = 0;   // k * feature_width
  uint64_t dep_chain_bits = 0;
  uint64_t per_flow_register_bits = 0;  // feature + sid + counter + dep chain
  unsigned stages_for_tables = 0;
  unsigned stages_for_registers = 0;
  uint64_t flows_supported = 0;
  double recirc_bps = 0.0;  // filled in by estimate_recirc when an env is given
};

namespace resource_detail {

// First-fit-decreasing table packing under per-stage count and key-width
// limits; returns the number of stages used.
inline unsigned pack_tables(std::vector<unsigned> widths,
                            const TargetProfile& profile) {
  std::sort(widths.begin(), widths.end(), std::greater<unsigned>());
  std::vector<std::pair<unsigned, unsigned>> stages;  // (tables, bits)
  for (unsigned w : widths) {
    bool placed = false;
    for (auto& [count, bits] : stages) {
      if (count < profile.max_parallel_tables_per_stage &&
          bits + w <= profile.stage_key_bits) {
        ++count;
        bits += w;
        placed = true;
        break;
      }
    }
    if (!placed) stages.emplace_back(1, w);
  }
  return static_cast<unsigned>(stages.size());
}

inline unsigned table_stage_count(const std::vector<unsigned>& table_widths,
                                  const TargetProfile& profile) {
  // dependency chain stages + packed match-action stages + window/boundary
  // bookkeeping
  return profile.dep_chain_stages + pack_tables(table_widths, profile) + 1;
}

}  // namespace resource_detail

// Register-side flow capacity of the profile for a nominal k-feature
// deployment whose features carry no dependency-chain state; this is the
// calibration the shipped profile is tuned against.
inline uint64_t nominal_flow_capacity(const TargetProfile& profile, unsigned k,
                                      unsigned feature_width = 32) {
  std::vector<unsigned> widths;
  for (unsigned i = 0; i < k; ++i) {
    widths.push_back(profile.sid_bits + feature_width);      // feature table
    widths.push_back(profile.sid_bits + profile.op_table_guard_bits);
  }
  widths.push_back(profile.sid_bits + 2 * k);  // model table, nominal marks
  unsigned t = resource_detail::table_stage_count(widths, profile);
  if (t >= profile.num_stages) return 0;
  uint64_t per_flow = uint64_t{k} * feature_width + profile.sid_bits +
                      profile.counter_bits;
  return (profile.num_stages - t) * profile.register_bits_per_stage / per_flow;
}

inline ResourceReport estimate(const CompiledTables& tables,
                               const PartitionConfig& config,
                               const TargetProfile& profile,
                               unsigned feature_width,
                               const FeatureCatalog& catalog = default_catalog()) {
  ResourceReport rep;
  rep.tcam_entries = tables.total_entries();
  for (const auto& [f, entries] : tables.feature_tables)
    rep.tcam_bits +=
        entries.size() * profile.tcam_entry_cost(tables.feature_key_width());
  rep.tcam_bits += tables.model_table.size() *
                   profile.tcam_entry_cost(tables.model_key_width());

  rep.feature_register_bits = uint64_t{config.k} * feature_width;
  rep.dep_chain_bits = uint64_t{profile.intermediate_register_bits} *
                       catalog.intermediate_union().size();
  rep.per_flow_register_bits = rep.feature_register_bits + profile.sid_bits +
                               profile.counter_bits + rep.dep_chain_bits;

  // k match-key generator MATs (re-keyed per subtree) + k operator-selection
  // MATs + the model table; entries from every subtree share these tables.
  std::vector<unsigned> widths;
  for (unsigned i = 0; i < config.k; ++i) {
    widths.push_back(tables.feature_key_width());
    widths.push_back(profile.sid_bits + profile.op_table_guard_bits);
  }
  widths.push_back(tables.model_key_width());
  rep.stages_for_tables = resource_detail::table_stage_count(widths, profile);

  if (rep.stages_for_tables >= profile.num_stages) {
    rep.stages_for_registers = 0;
    rep.flows_supported = 0;
    return rep;
  }
  rep.stages_for_registers = profile.num_stages - rep.stages_for_tables;
  rep.flows_supported = rep.stages_for_registers *
                        profile.register_bits_per_stage /
                        rep.per_flow_register_bits;
  return rep;
}

// In-band control traffic: one recirculated packet per window boundary that
// advances to a new partition. exit_fractions[j] is the fraction of flows
// whose inference terminates at partition j; a 1-partition model never
// recirculates.
inline double estimate_recirc(const PartitionConfig& config,
                              const EnvironmentModel& env,
                              std::span<const double> exit_fractions,
                              unsigned control_packet_bits) {
  const uint32_t p = config.p();
  if (p <= 1) return 0.0;
  double reach = 1.0;  // fraction of flows reaching the current partition
  double recircs_per_flow = 0.0;
  for (uint32_t j = 0; j + 1 < p; ++j) {
    double exit_j = j < exit_fractions.size() ? exit_fractions[j] : 0.0;
    reach *= std::max(0.0, 1.0 - exit_j);
    recircs_per_flow += reach;  // flows advancing into partition j+1
  }
  return env.arrival_rate_fps() * recircs_per_flow * control_packet_bits;
}

struct FeasibilityVerdict {
  bool feasible = true;
  std::string reason;  // first violated budget: tcam | stages | flows | recirc
};

inline FeasibilityVerdict check_feasibility(const ResourceReport& rep,
                                            const TargetProfile& profile,
                                            uint64_t scenario_flows) {
  if (rep.tcam_bits > profile.tcam_bits_total) return {false, "tcam"};
  if (rep.stages_for_tables > profile.num_stages || rep.stages_for_registers == 0)
    return {false, "stages"};
  if (rep.flows_supported < scenario_flows) return {false, "flows"};
  if (rep.recirc_bps > profile.recirc_bandwidth_bps) return {false, "recirc"};
  return {true, ""};
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::ordered_json profile_to_json(const TargetProfile& p) {
  return nlohmann::ordered_json{
      {"name", p.name},
      {"num_stages", p.num_stages},
      {"tcam_bits_total", p.tcam_bits_total},
      {"tcam_block_bits", p.tcam_block_bits},
      {"register_bits_per_stage", p.register_bits_per_stage},
      {"max_parallel_tables_per_stage", p.max_parallel_tables_per_stage},
      {"stage_key_bits", p.stage_key_bits},
      {"recirc_bandwidth_bps", p.recirc_bandwidth_bps},
      {"control_packet_bits", p.control_packet_bits},
      {"sid_bits", p.sid_bits},
      {"counter_bits", p.counter_bits},
      {"dep_chain_stages", p.dep_chain_stages},
      {"intermediate_register_bits", p.intermediate_register_bits},
      {"op_table_guard_bits", p.op_table_guard_bits},
  };
}

inline TargetProfile profile_from_json(const nlohmann::json& j) {
  TargetProfile p;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("name", p.name);
  get("num_stages", p.num_stages);
  get("tcam_bits_total", p.tcam_bits_total);
  get("tcam_block_bits", p.tcam_block_bits);
  get("register_bits_per_stage", p.register_bits_per_stage);
  get("max_parallel_tables_per_stage", p.max_parallel_tables_per_stage);
  get("stage_key_bits", p.stage_key_bits);
  get("recirc_bandwidth_bps", p.recirc_bandwidth_bps);
  get("control_packet_bits", p.control_packet_bits);
  get("sid_bits", p.sid_bits);
  get("counter_bits", p.counter_bits);
  get("dep_chain_stages", p.dep_chain_stages);
  get("intermediate_register_bits", p.intermediate_register_bits);
  get("op_table_guard_bits", p.op_table_guard_bits);
  return p;
}

inline nlohmann::ordered_json report_to_json(const ResourceReport& r) {
  return nlohmann::ordered_json{
      {"tcam_entries", r.tcam_entries},
      {"tcam_bits", r.tcam_bits},
      {"feature_register_bits", r.feature_register_bits},
      {"dep_chain_bits", r.dep_chain_bits},
      {"per_flow_register_bits", r.per_flow_register_bits},
      {"stages_for_tables", r.stages_for_tables},
      {"stages_for_registers", r.stages_for_registers},
      {"flows_supported", r.flows_supported},
      {"recirc_bps", r.recirc_bps},
  };
}

}  // namespace parttree
