#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "parttree/bits.hpp"
#include "parttree/flowdata.hpp"
#include "parttree/partition.hpp"
#include "parttree/rulegen.hpp"

namespace parttree {

enum class IndexingMode : uint8_t { exact, hashed };
enum class WindowMode : uint8_t { declared, fixed };

struct SimConfig {
  CompiledTables tables;
  uint32_t p = 1;
  uint32_t k = 1;
  unsigned feature_width = 32;
  uint32_t initial_sid = kInitialSid;
  std::map<uint32_t, uint32_t> sid_partition;

  IndexingMode indexing = IndexingMode::exact;
  size_t hash_slots = 0;  // required for hashed mode
  WindowMode window_mode = WindowMode::declared;
  uint64_t fixed_window_len = 0;  // for count-only streaming inputs
  unsigned control_packet_bits = 512;

  void validate() const {
    if (indexing == IndexingMode::hashed && hash_slots == 0)
      throw config_error("hashed indexing requires hash_slots > 0");
    if (window_mode == WindowMode::fixed && fixed_window_len == 0)
      throw config_error("fixed window mode requires a window length");
    if (k == 0) throw config_error("k must be >= 1");
  }
};

inline SimConfig make_sim_config(const PartitionedModel& model,
                                 CompiledTables tables) {
  SimConfig cfg;
  cfg.tables = std::move(tables);
  cfg.p = model.config.p();
  cfg.k = model.config.k;
  cfg.feature_width = model.feature_width;
  cfg.initial_sid = model.initial_sid;
  for (const auto& [sid, entry] : model.subtrees)
    cfg.sid_partition[sid] = entry.partition;
  return cfg;
}

struct SimEvent {
  FlowKey key;
  std::string flow_id;
  uint64_t flow_total_pkts = 0;  // header-embedded flow size stand-in
  PacketRecord pkt;
};

inline std::vector<SimEvent> events_from_traces(
    const std::vector<FlowTrace>& flows) {
  std::vector<SimEvent> events;
  for (const auto& tr : flows)
    for (const auto& pkt : tr.packets)
      events.push_back(SimEvent{tr.key, tr.flow_id, tr.packets.size(), pkt});
  std::stable_sort(events.begin(), events.end(),
                   [](const SimEvent& a, const SimEvent& b) {
                     return a.pkt.ts_us < b.pkt.ts_us;
                   });
  return events;
}

struct SimStats {
  struct PerFlow {
    std::string flow_id;
    bool classified = false;
    uint32_t label = 0;
    uint64_t ttd_pkts = 0;
    uint64_t ttd_us = 0;
    uint64_t recircs = 0;
    bool partial = false;  // digest forced by flow ending mid-window
    bool faulted = false;
  };
  std::vector<PerFlow> per_flow;  // ordered by flow_id

  uint64_t flows = 0;
  uint64_t digests = 0;
  uint64_t partial_digests = 0;
  uint64_t recircs_total = 0;
  uint64_t control_bits_total = 0;
  uint64_t faults = 0;
  uint64_t collisions = 0;
};

// Event-driven model of the partitioned inference pipeline. Per-slot state
// mirrors the three register-array sets: reserved (SID + packet counter),
// dependency-chain intermediates (the window accumulator), and the k feature
// registers bound to the active subtree.
class PipelineSimulator {
 public:
  explicit PipelineSimulator(SimConfig cfg, std::ostream* debug = nullptr)
      : cfg_(std::move(cfg)), debug_(debug) {
    cfg_.validate();
    if (cfg_.indexing == IndexingMode::hashed)
      slots_.resize(cfg_.hash_slots);
  }

  void process_packet(const SimEvent& ev) {
    FlowInfo& flow = flow_info(ev);
    ++flow.pkts_seen;
    flow.last_ts = ev.pkt.ts_us;
    if (flow.done) {
      // Classified flows keep polluting a shared slot but never re-digest.
      if (cfg_.indexing == IndexingMode::hashed) {
        SlotState& slot = slot_for(ev.key);
        slot.counter += 1;
        slot.acc.update(ev.pkt);
      }
      return;
    }

    SlotState& slot = slot_for(ev.key);
    slot.counter += 1;
    slot.acc.update(ev.pkt);
    bind_feature_registers(slot);
    log(ev, slot, "arrive");

    auto bounds = boundaries(ev);
    // one lookup per window boundary; empty windows of short flows share a
    // boundary value and resolve back to back. The hop guard faults models
    // whose routing fails to advance the partition.
    for (uint32_t hop = 0; !flow.done && !flow.faulted; ++hop) {
      if (hop > cfg_.p) {
        fault(flow, ev, slot, "routing does not advance");
        break;
      }
      auto pit = cfg_.sid_partition.find(slot.sid);
      if (pit == cfg_.sid_partition.end()) {
        fault(flow, ev, slot, "unknown SID");
        break;
      }
      uint32_t partition = pit->second;
      if (partition >= cfg_.p || slot.counter != bounds[partition]) break;
      run_lookup(flow, ev, slot, /*partial=*/false);
    }
  }

  void run(const std::vector<SimEvent>& events) {
    uint64_t prev_ts = 0;
    for (const auto& ev : events) {
      if (ev.pkt.ts_us < prev_ts)
        throw config_error("simulator events are not time-ordered");
      prev_ts = ev.pkt.ts_us;
      process_packet(ev);
    }
  }

  // Flows that ended before their next boundary get a digest from a lookup
  // over the partial window, flagged in the stats. When that lookup routes to
  // another partition, the remaining windows are empty: state resets and the
  // chain resolves on zeroed registers, exactly like the offline path for
  // short flows. No control packets are charged for a flow that already
  // ended.
  void finish() {
    for (auto& [key, flow] : flows_) {
      if (flow.done || flow.faulted) continue;
      SlotState& slot = slot_for(key);
      SimEvent ev;
      ev.key = key;
      ev.flow_id = flow.flow_id;
      ev.pkt.ts_us = flow.last_ts;
      for (uint32_t hop = 0; hop <= cfg_.p && !flow.done && !flow.faulted;
           ++hop)
        run_lookup(flow, ev, slot, /*partial=*/true);
      if (!flow.done && !flow.faulted) fault(flow, ev, slot, "partial chain");
    }
  }

  SimStats stats() const {
    SimStats st;
    st.collisions = collisions_;
    for (const auto& [key, flow] : flows_) {
      SimStats::PerFlow pf;
      pf.flow_id = flow.flow_id;
      pf.classified = flow.done;
      pf.label = flow.label;
      pf.ttd_pkts = flow.ttd_pkts;
      pf.ttd_us = flow.ttd_us;
      pf.recircs = flow.recircs;
      pf.partial = flow.partial;
      pf.faulted = flow.faulted;
      st.per_flow.push_back(std::move(pf));
      ++st.flows;
      if (flow.done) ++st.digests;
      if (flow.partial) ++st.partial_digests;
      if (flow.faulted) ++st.faults;
      st.recircs_total += flow.recircs;
    }
    std::stable_sort(st.per_flow.begin(), st.per_flow.end(),
                     [](const auto& a, const auto& b) {
                       return a.flow_id < b.flow_id;
                     });
    st.control_bits_total = st.recircs_total * cfg_.control_packet_bits;
    return st;
  }

 private:
  struct SlotState {
    uint32_t sid;
    uint64_t counter = 0;
    WindowAccumulator acc;
    std::vector<uint64_t> feature_regs;

    explicit SlotState(uint32_t initial_sid, uint32_t k)
        : sid(initial_sid), feature_regs(k, 0) {}
    SlotState() : sid(kUnclassifiedSid) {}
  };

  struct FlowInfo {
    std::string flow_id;
    uint64_t total_pkts = 0;
    uint64_t pkts_seen = 0;
    uint64_t first_ts = 0;
    uint64_t last_ts = 0;
    bool done = false;
    bool faulted = false;
    bool partial = false;
    uint32_t label = 0;
    uint64_t ttd_pkts = 0;
    uint64_t ttd_us = 0;
    uint64_t recircs = 0;
  };

  FlowInfo& flow_info(const SimEvent& ev) {
    auto [it, fresh] = flows_.try_emplace(ev.key);
    if (fresh) {
      it->second.flow_id = ev.flow_id;
      it->second.total_pkts = ev.flow_total_pkts;
      it->second.first_ts = ev.pkt.ts_us;
    }
    return it->second;
  }

  SlotState& slot_for(const FlowKey& key) {
    if (cfg_.indexing == IndexingMode::exact) {
      auto [it, fresh] =
          exact_slots_.try_emplace(key, cfg_.initial_sid, cfg_.k);
      return it->second;
    }
    size_t idx = crc32(key.canonical_bytes()) % cfg_.hash_slots;
    SlotState& slot = slots_[idx];
    auto& owner = slot_owner_[idx];
    if (!owner.has_value()) {
      slot = SlotState(cfg_.initial_sid, cfg_.k);
      owner = key;
    } else if (*owner != key) {
      ++collisions_;
      owner = key;  // colliding flows share the register state
    }
    return slot;
  }

  std::vector<uint64_t> boundaries(const SimEvent& ev) const {
    if (cfg_.window_mode == WindowMode::declared)
      return window_boundaries(std::max<uint64_t>(ev.flow_total_pkts, 1), cfg_.p);
    std::vector<uint64_t> b(cfg_.p);
    for (uint32_t j = 0; j < cfg_.p; ++j)
      b[j] = cfg_.fixed_window_len * (j + 1);
    return b;
  }

  // Operator selection: the slots bound to the active subtree are refreshed
  // from the dependency-chain state after every packet.
  void bind_feature_registers(SlotState& slot) {
    auto sit = cfg_.tables.schemes.find(slot.sid);
    if (sit == cfg_.tables.schemes.end()) return;
    const MarkScheme& scheme = sit->second;
    for (size_t i = 0; i < scheme.features.size() && i < slot.feature_regs.size();
         ++i)
      slot.feature_regs[i] = slot.acc.extract(
          static_cast<FeatureId>(scheme.features[i].feature),
          cfg_.feature_width);
  }

  void run_lookup(FlowInfo& flow, const SimEvent& ev, SlotState& slot,
                  bool partial) {
    TableAction action;
    try {
      auto sit = cfg_.tables.schemes.find(slot.sid);
      if (sit == cfg_.tables.schemes.end())
        throw integrity_error("no scheme for SID " + std::to_string(slot.sid));
      const MarkScheme& scheme = sit->second;
      action = tcam_lookup_fn(cfg_.tables, slot.sid, [&](uint32_t f) {
        for (size_t i = 0; i < scheme.features.size(); ++i)
          if (scheme.features[i].feature == f) return slot.feature_regs[i];
        throw integrity_error("feature " + std::to_string(f) +
                              " not bound to a register slot");
      });
    } catch (const integrity_error&) {
      fault(flow, ev, slot, "lookup miss");
      return;
    }

    if (action.kind == TableAction::next_sid) {
      if (!partial) ++flow.recircs;
      slot.sid = action.value;
      slot.acc.reset();
      std::fill(slot.feature_regs.begin(), slot.feature_regs.end(), 0);
      log(ev, slot, partial ? "advance-partial" : "recirc");
      return;
    }

    flow.done = true;
    flow.partial = partial;
    flow.label = action.value;
    flow.ttd_pkts = flow.pkts_seen;
    flow.ttd_us = ev.pkt.ts_us - flow.first_ts;
    log(ev, slot, partial ? "digest-partial" : "digest");
    if (cfg_.indexing == IndexingMode::hashed) {
      // digest ack clears the slot for reuse
      size_t idx = crc32(ev.key.canonical_bytes()) % cfg_.hash_slots;
      slots_[idx] = SlotState(cfg_.initial_sid, cfg_.k);
      slot_owner_[idx].reset();
    }
  }

  void fault(FlowInfo& flow, const SimEvent& ev, SlotState& slot,
             const char* what) {
    flow.faulted = true;
    log(ev, slot, std::string("fault:") + what);
  }

  void log(const SimEvent& ev, const SlotState& slot, const std::string& what) {
    if (!debug_) return;
    (*debug_) << "ts=" << ev.pkt.ts_us << " flow=" << ev.flow_id
              << " sid=" << slot.sid << " ctr=" << slot.counter
              << " event=" << what << "\n";
  }

  SimConfig cfg_;
  std::ostream* debug_ = nullptr;
  std::map<FlowKey, SlotState> exact_slots_;
  std::vector<SlotState> slots_;
  std::map<size_t, std::optional<FlowKey>> slot_owner_;
  std::map<FlowKey, FlowInfo> flows_;
  uint64_t collisions_ = 0;
};

inline SimStats run_trace(const SimConfig& cfg,
                          const std::vector<SimEvent>& events,
                          std::ostream* debug = nullptr) {
  PipelineSimulator sim(cfg, debug);
  sim.run(events);
  sim.finish();
  return sim.stats();
}

// ---------------------------------------------------------------------------
// TTD measurement

struct TtdPoint {
  uint64_t ttd_pkts;
  uint64_t ttd_us;
};

inline std::vector<TtdPoint> measure_ttd(const SimStats& stats) {
  std::vector<TtdPoint> out;
  for (const auto& pf : stats.per_flow)
    if (pf.classified) out.push_back(TtdPoint{pf.ttd_pkts, pf.ttd_us});
  return out;
}

// Monotone CDF over arbitrary values; last point reaches 1.0.
inline std::vector<std::pair<uint64_t, double>> ttd_cdf(
    std::vector<uint64_t> values) {
  std::sort(values.begin(), values.end());
  std::vector<std::pair<uint64_t, double>> cdf;
  for (size_t i = 0; i < values.size(); ++i) {
    if (!cdf.empty() && cdf.back().first == values[i])
      cdf.back().second = double(i + 1) / values.size();
    else
      cdf.emplace_back(values[i], double(i + 1) / values.size());
  }
  return cdf;
}

inline nlohmann::ordered_json stats_to_json(const SimStats& st) {
  nlohmann::ordered_json j;
  j["per_flow"] = nlohmann::ordered_json::array();
  for (const auto& pf : st.per_flow) {
    j["per_flow"].push_back({{"id", pf.flow_id},
                             {"classified", pf.classified},
                             {"class", pf.label},
                             {"ttd_pkts", pf.ttd_pkts},
                             {"ttd_us", pf.ttd_us},
                             {"recircs", pf.recircs},
                             {"partial", pf.partial},
                             {"faulted", pf.faulted}});
  }
  j["totals"] = {{"flows", st.flows},
                 {"digests", st.digests},
                 {"partial_digests", st.partial_digests},
                 {"recircs", st.recircs_total},
                 {"control_bits", st.control_bits_total},
                 {"faults", st.faults}};
  j["collisions"] = st.collisions;
  return j;
}

}  // namespace parttree
