#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "parttree/bits.hpp"
#include "parttree/dtree.hpp"
#include "parttree/partition.hpp"

namespace parttree {

// Exact set of thresholds appearing in the subtree's splits, per feature,
// deduplicated and sorted.
inline std::map<uint32_t, std::vector<uint64_t>> collect_thresholds(
    const Subtree& tree) {
  std::map<uint32_t, std::vector<uint64_t>> out;
  for (const auto& nd : tree.nodes)
    if (!nd.is_leaf) out[nd.feature].push_back(nd.threshold);
  for (auto& [f, v] : out) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  }
  return out;
}

// Range marks: for a feature with sorted thresholds t_0 < ... < t_{m-1},
// mark bit i = 1 iff value > t_i. Marks are monotone under <= (bitwise
// subset) and only the m+1 patterns 0..0, 0..01, ..., 1..1 occur.
struct MarkScheme {
  struct FeatureMarks {
    uint32_t feature = 0;
    std::vector<uint64_t> thresholds;  // sorted ascending
    unsigned offset = 0;               // bit offset inside the mark region
  };
  std::vector<FeatureMarks> features;  // ascending feature index
  unsigned mark_width = 0;

  const FeatureMarks* find(uint32_t feature) const {
    for (const auto& fm : features)
      if (fm.feature == feature) return &fm;
    return nullptr;
  }
};

inline MarkScheme make_mark_scheme(const Subtree& tree) {
  MarkScheme s;
  unsigned offset = 0;
  for (auto& [f, thr] : collect_thresholds(tree)) {
    MarkScheme::FeatureMarks fm;
    fm.feature = f;
    fm.thresholds = thr;
    fm.offset = offset;
    offset += static_cast<unsigned>(thr.size());
    s.features.push_back(std::move(fm));
  }
  s.mark_width = offset;
  return s;
}

inline BitString mark_for_value(const MarkScheme::FeatureMarks& fm,
                                uint64_t value) {
  BitString m(static_cast<unsigned>(fm.thresholds.size()));
  for (size_t i = 0; i < fm.thresholds.size(); ++i)
    if (value > fm.thresholds[i]) m.set(static_cast<unsigned>(i), true);
  return m;
}

struct TableAction {
  enum Kind : uint8_t { set_mark, next_sid, final_class } kind = final_class;
  uint32_t value = 0;  // sid or class label
  uint32_t feature = 0;
  BitString mark;  // for set_mark

  std::string to_string() const {
    switch (kind) {
      case set_mark: return "mark=" + mark.hex();
      case next_sid: return "next=" + std::to_string(value);
      case final_class: return "class=" + std::to_string(value);
    }
    return "?";
  }
};

struct TernaryEntry {
  BitString value;
  BitString mask;
  int priority = 0;  // care-bit count; ties resolve by insertion order
  TableAction action;
};

// Compiled tables for a whole model. Key layouts (bit 0 = LSB):
//   feature table f: [sid : sid_bits][raw value : feature_width]
//   model table:     [sid : sid_bits][range marks : mark_width]
// The model-table mark region is the maximum over subtrees; register slots
// and match keys are re-keyed per partition, so narrower subtrees wildcard
// the surplus bits.
struct CompiledTables {
  unsigned sid_bits = 8;
  unsigned feature_width = 32;
  unsigned mark_width = 0;

  std::map<uint32_t, std::vector<TernaryEntry>> feature_tables;
  std::vector<TernaryEntry> model_table;
  std::map<uint32_t, MarkScheme> schemes;               // sid -> scheme
  std::map<uint32_t, size_t> model_entries_per_sid;

  unsigned feature_key_width() const { return sid_bits + feature_width; }
  unsigned model_key_width() const { return sid_bits + mark_width; }

  size_t feature_entry_count() const {
    size_t n = 0;
    for (const auto& [f, v] : feature_tables) n += v.size();
    return n;
  }
  size_t model_entry_count() const { return model_table.size(); }
  size_t total_entries() const {
    return feature_entry_count() + model_entry_count();
  }
};

namespace rulegen_detail {

inline void emit_feature_entries(CompiledTables& tables, uint32_t sid,
                                 const MarkScheme::FeatureMarks& fm) {
  const unsigned w = tables.feature_width;
  const unsigned kw = tables.feature_key_width();
  const uint64_t vmax = width_max(w);
  const size_t m = fm.thresholds.size();
  auto& dst = tables.feature_tables[fm.feature];
  for (size_t r = 0; r <= m; ++r) {
    uint64_t lo = r == 0 ? 0 : fm.thresholds[r - 1] + 1;
    uint64_t hi = r == m ? vmax : fm.thresholds[r];
    if (lo > hi) continue;  // threshold at the domain maximum
    BitString mark(static_cast<unsigned>(m));
    for (size_t b = 0; b < r; ++b) mark.set(static_cast<unsigned>(b), true);
    for (const Prefix& p : interval_to_prefixes(lo, hi, w)) {
      TernaryEntry e;
      e.value = BitString(kw);
      e.mask = BitString(kw);
      e.value.set_field(0, tables.sid_bits, sid);
      e.mask.set_field(0, tables.sid_bits, width_max(tables.sid_bits));
      e.value.set_field(tables.sid_bits, w, p.value);
      e.mask.set_field(tables.sid_bits, w, p.mask);
      e.priority = static_cast<int>(e.mask.popcount());
      e.action.kind = TableAction::set_mark;
      e.action.feature = fm.feature;
      e.action.mark = mark;
      dst.push_back(std::move(e));
    }
  }
}

inline void emit_model_entries(
    CompiledTables& tables, const Subtree& tree, uint32_t sid,
    const MarkScheme& scheme,
    const std::function<RouteAction(int32_t)>& route) {
  const unsigned kw = tables.model_key_width();

  struct Constraint {
    unsigned bit;
    bool value;
  };
  size_t emitted = 0;

  auto walk = [&](auto&& self, int32_t id,
                  std::vector<Constraint> path) -> void {
    const TreeNode& nd = tree.nodes[id];
    if (nd.is_leaf) {
      TernaryEntry e;
      e.value = BitString(kw);
      e.mask = BitString(kw);
      e.value.set_field(0, tables.sid_bits, sid);
      e.mask.set_field(0, tables.sid_bits, width_max(tables.sid_bits));
      for (const Constraint& c : path) {
        e.value.set(c.bit, c.value);
        e.mask.set(c.bit, true);
      }
      e.priority = static_cast<int>(e.mask.popcount());
      RouteAction act = route(id);
      e.action.kind = act.kind == RouteAction::next_sid
                          ? TableAction::next_sid
                          : TableAction::final_class;
      e.action.value = act.value;
      tables.model_table.push_back(std::move(e));
      ++emitted;
      return;
    }
    const auto* fm = scheme.find(nd.feature);
    auto it = std::lower_bound(fm->thresholds.begin(), fm->thresholds.end(),
                               nd.threshold);
    unsigned bit = tables.sid_bits + fm->offset +
                   static_cast<unsigned>(it - fm->thresholds.begin());
    // A path may re-test a threshold bit only in the same direction; trained
    // trees never contradict their own path, so a conflict is a corrupt tree.
    auto descend = [&](int32_t child, bool value) {
      for (const Constraint& c : path)
        if (c.bit == bit && c.value != value)
          throw integrity_error(
              "subtree path contradicts itself at feature " +
              std::to_string(nd.feature));
      auto next = path;
      next.push_back(Constraint{bit, value});
      self(self, child, std::move(next));
    };
    descend(nd.left, false);   // <= threshold
    descend(nd.right, true);   // >  threshold
  };

  walk(walk, tree.root, {});
  tables.model_entries_per_sid[sid] = emitted;
}

}  // namespace rulegen_detail

// Compile one subtree's feature and model entries into `tables`. The scheme
// for `sid` must already be registered and the table widths fixed; `route`
// supplies the action for every leaf.
inline void compile_subtree(CompiledTables& tables, const Subtree& tree,
                            uint32_t sid,
                            const std::function<RouteAction(int32_t)>& route) {
  const MarkScheme& scheme = tables.schemes.at(sid);
  for (const auto& fm : scheme.features)
    rulegen_detail::emit_feature_entries(tables, sid, fm);
  rulegen_detail::emit_model_entries(tables, tree, sid, scheme, route);
}

inline CompiledTables compile_model(const PartitionedModel& model,
                                    unsigned sid_bits = 8) {
  CompiledTables tables;
  tables.sid_bits = sid_bits;
  tables.feature_width = model.feature_width;

  for (const auto& [sid, entry] : model.subtrees) {
    if (sid > width_max(sid_bits))
      throw config_error("model needs more than " + std::to_string(sid_bits) +
                         " SID bits (" + std::to_string(model.subtrees.size()) +
                         " subtrees)");
    MarkScheme s = make_mark_scheme(entry.tree);
    tables.mark_width = std::max(tables.mark_width, s.mark_width);
    tables.schemes[sid] = std::move(s);
  }

  for (const auto& [sid, entry] : model.subtrees) {
    uint32_t s = sid;
    compile_subtree(tables, entry.tree, sid, [&model, s](int32_t leaf) {
      return model.route(s, leaf);
    });
  }
  return tables;
}

// Single-subtree compilation (all leaves mapped through `route`); used for
// per-subtree tests and tools.
inline CompiledTables compile_single_subtree(
    const Subtree& tree, uint32_t sid, unsigned feature_width,
    const std::function<RouteAction(int32_t)>& route, unsigned sid_bits = 8) {
  CompiledTables tables;
  tables.sid_bits = sid_bits;
  tables.feature_width = feature_width;
  MarkScheme s = make_mark_scheme(tree);
  tables.mark_width = s.mark_width;
  tables.schemes[sid] = std::move(s);
  compile_subtree(tables, tree, sid, route);
  return tables;
}

namespace rulegen_detail {

inline const TernaryEntry* best_match(const std::vector<TernaryEntry>& entries,
                                      const BitString& key) {
  const TernaryEntry* best = nullptr;
  for (const auto& e : entries)
    if (BitString::ternary_match(key, e.value, e.mask))
      if (!best || e.priority > best->priority) best = &e;
  return best;
}

}  // namespace rulegen_detail

// Ternary lookup through the compiled tables: feature tables produce range
// marks from the raw values, the model table matches marks + SID. The value
// getter receives the feature index (the simulator maps register slots, the
// offline path indexes a full feature vector).
inline TableAction tcam_lookup_fn(
    const CompiledTables& tables, uint32_t sid,
    const std::function<uint64_t(uint32_t)>& value_of) {
  auto sit = tables.schemes.find(sid);
  if (sit == tables.schemes.end())
    throw integrity_error("tcam_lookup: unknown SID " + std::to_string(sid));
  const MarkScheme& scheme = sit->second;

  BitString key(tables.model_key_width());
  key.set_field(0, tables.sid_bits, sid);
  for (const auto& fm : scheme.features) {
    BitString fkey(tables.feature_key_width());
    fkey.set_field(0, tables.sid_bits, sid);
    fkey.set_field(tables.sid_bits, tables.feature_width,
                   saturate(value_of(fm.feature), tables.feature_width));
    auto ft = tables.feature_tables.find(fm.feature);
    const TernaryEntry* e =
        ft == tables.feature_tables.end()
            ? nullptr
            : rulegen_detail::best_match(ft->second, fkey);
    if (!e || e->action.kind != TableAction::set_mark)
      throw integrity_error("feature table miss on feature " +
                            std::to_string(fm.feature));
    for (unsigned b = 0; b < e->action.mark.width(); ++b)
      key.set(tables.sid_bits + fm.offset + b, e->action.mark.get(b));
  }

  const TernaryEntry* e = rulegen_detail::best_match(tables.model_table, key);
  if (!e) throw integrity_error("model table miss for SID " + std::to_string(sid));
  return e->action;
}

inline TableAction tcam_lookup(const CompiledTables& tables, uint32_t sid,
                               std::span<const uint64_t> features) {
  return tcam_lookup_fn(tables, sid,
                        [&](uint32_t f) { return features[f]; });
}

// Rule dump, one line per entry: table,sid,priority,key_hex,mask_hex,action.
// Feature tables in ascending feature order, then the model table; entries
// keep compilation order (ascending SID, region, prefix / leaf).
inline void dump_rules(std::ostream& out, const CompiledTables& tables) {
  out << "table,sid,priority,key_hex,mask_hex,action\n";
  auto line = [&](const std::string& name, const TernaryEntry& e) {
    uint64_t sid = e.value.get_field(0, tables.sid_bits);
    out << name << ',' << sid << ',' << e.priority << ',' << e.value.hex()
        << ',' << e.mask.hex() << ',' << e.action.to_string() << "\n";
  };
  for (const auto& [f, entries] : tables.feature_tables)
    for (const auto& e : entries) line("feat_" + std::to_string(f), e);
  for (const auto& e : tables.model_table) line("model", e);
}

}  // namespace parttree
