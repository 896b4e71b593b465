#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "parttree/common.hpp"

namespace parttree {

// TCP flag bits carried per packet.
enum PktFlag : uint8_t {
  FLAG_SYN = 1 << 0,
  FLAG_FIN = 1 << 1,
  FLAG_ACK = 1 << 2,
  FLAG_RST = 1 << 3,
  FLAG_PSH = 1 << 4,
};

enum class Direction : uint8_t { fwd, bwd };

struct PacketRecord {
  uint64_t ts_us = 0;   // microseconds since trace start
  uint32_t size = 0;    // bytes, > 0
  uint8_t flags = 0;    // PktFlag bit-set
  Direction dir = Direction::fwd;
};

struct FlowKey {
  std::string src;
  std::string dst;
  uint16_t sport = 0;
  uint16_t dport = 0;
  uint8_t proto = 0;

  auto operator<=>(const FlowKey&) const = default;

  // Canonical byte encoding used for register-index hashing.
  std::string canonical_bytes() const {
    std::string b;
    b.reserve(src.size() + dst.size() + 7);
    b += src;
    b.push_back('\0');
    b += dst;
    b.push_back('\0');
    b.push_back(static_cast<char>(sport >> 8));
    b.push_back(static_cast<char>(sport & 0xFF));
    b.push_back(static_cast<char>(dport >> 8));
    b.push_back(static_cast<char>(dport & 0xFF));
    b.push_back(static_cast<char>(proto));
    return b;
  }
};

struct FlowTrace {
  FlowKey key;
  std::string flow_id;
  std::vector<PacketRecord> packets;  // ordered by timestamp
  uint32_t label = 0;

  bool is_short(unsigned p) const { return packets.size() < p; }
};

struct WindowSpec {
  unsigned num_partitions = 1;
  unsigned max_partitions = 7;

  void validate() const {
    if (num_partitions < 1) throw config_error("num_partitions must be >= 1");
    if (num_partitions > max_partitions)
      throw config_error("num_partitions exceeds configured maximum (" +
                         std::to_string(max_partitions) + ")");
  }
};

// Cumulative window boundaries: boundary j (1-based) = ceil(j*F/p).
// Window j covers packets (b_{j-1}, b_j] in 1-based packet counts; windows
// may be empty when F < p.
inline std::vector<uint64_t> window_boundaries(uint64_t flow_len, unsigned p) {
  if (flow_len < 1) throw config_error("window_boundaries: flow_len must be >= 1");
  if (p < 1) throw config_error("window_boundaries: p must be >= 1");
  std::vector<uint64_t> b(p);
  for (unsigned j = 1; j <= p; ++j)
    b[j - 1] = (static_cast<uint64_t>(j) * flow_len + p - 1) / p;
  return b;
}

// ---------------------------------------------------------------------------
// Feature catalog

enum class FeatureOp : uint8_t { count, sum, min, max, mean, last, flag_count };

inline const char* to_string(FeatureOp op) {
  switch (op) {
    case FeatureOp::count: return "count";
    case FeatureOp::sum: return "sum";
    case FeatureOp::min: return "min";
    case FeatureOp::max: return "max";
    case FeatureOp::mean: return "mean";
    case FeatureOp::last: return "last";
    case FeatureOp::flag_count: return "flag-count";
  }
  return "?";
}

// Feature ids double as vector indices; the default catalog is fixed and
// ordered, so trained models and rules reference features by index.
enum FeatureId : uint32_t {
  F_PKT_COUNT = 0,
  F_BYTE_SUM,
  F_MIN_SIZE,
  F_MAX_SIZE,
  F_MEAN_SIZE,
  F_MIN_IAT,
  F_MAX_IAT,
  F_MEAN_IAT,
  F_VAR_IAT,
  F_SYN_COUNT,
  F_FIN_COUNT,
  F_RST_COUNT,
  F_FWD_COUNT,
  F_BWD_COUNT,
  F_DURATION,
  F_MEAN_FWD_SIZE,
};

struct FeatureSpec {
  std::string name;
  FeatureOp op;
  unsigned dep_depth;  // register stages of intermediate state, <= 3
  std::vector<std::string> intermediates;
};

struct FeatureCatalog {
  std::vector<FeatureSpec> features;

  size_t size() const { return features.size(); }

  void validate() const {
    if (features.empty()) throw config_error("feature catalog is empty");
    for (const auto& f : features)
      if (f.dep_depth > 3)
        throw config_error("feature '" + f.name + "' exceeds dependency depth 3");
  }

  unsigned max_dep_depth() const {
    unsigned d = 0;
    for (const auto& f : features) d = std::max(d, f.dep_depth);
    return d;
  }

  // Distinct intermediate registers needed by the whole catalog.
  std::vector<std::string> intermediate_union() const {
    std::vector<std::string> u;
    for (const auto& f : features)
      for (const auto& i : f.intermediates)
        if (std::find(u.begin(), u.end(), i) == u.end()) u.push_back(i);
    std::sort(u.begin(), u.end());
    return u;
  }
};

inline const FeatureCatalog& default_catalog() {
  static const FeatureCatalog cat{{
      {"pkt_count", FeatureOp::count, 0, {}},
      {"byte_sum", FeatureOp::sum, 0, {}},
      {"min_size", FeatureOp::min, 0, {}},
      {"max_size", FeatureOp::max, 0, {}},
      {"mean_size", FeatureOp::mean, 1, {"size_sum"}},
      {"min_iat", FeatureOp::min, 1, {"last_ts"}},
      {"max_iat", FeatureOp::max, 1, {"last_ts"}},
      {"mean_iat", FeatureOp::mean, 2, {"last_ts", "iat_sum"}},
      {"var_iat", FeatureOp::mean, 3, {"last_ts", "iat_sum", "iat_sq_sum"}},
      {"syn_count", FeatureOp::flag_count, 0, {}},
      {"fin_count", FeatureOp::flag_count, 0, {}},
      {"rst_count", FeatureOp::flag_count, 0, {}},
      {"fwd_count", FeatureOp::count, 0, {}},
      {"bwd_count", FeatureOp::count, 0, {}},
      {"duration", FeatureOp::last, 1, {"first_ts"}},
      {"mean_fwd_size", FeatureOp::mean, 1, {"fwd_size_sum", "fwd_pkt_count"}},
  }};
  return cat;
}

// ---------------------------------------------------------------------------
// Window accumulator
//
// One accumulator holds all per-window state (the dependency-chain register
// contents). Features are pure extractions from it, so the offline
// featurizer and the pipeline simulator compute bit-identical values.

struct WindowAccumulator {
  uint64_t pkts = 0;
  uint64_t bytes = 0;
  uint64_t min_size = 0;
  uint64_t max_size = 0;
  uint64_t first_ts = 0;
  uint64_t last_ts = 0;
  uint64_t iats = 0;
  uint64_t iat_sum = 0;
  unsigned __int128 iat_sq_sum = 0;
  uint64_t min_iat = 0;
  uint64_t max_iat = 0;
  uint64_t syn = 0, fin = 0, rst = 0;
  uint64_t fwd = 0, bwd = 0;
  uint64_t fwd_bytes = 0;

  void reset() { *this = WindowAccumulator{}; }

  void update(const PacketRecord& pkt) {
    if (pkts > 0) {
      uint64_t iat = pkt.ts_us - last_ts;
      if (iats == 0 || iat < min_iat) min_iat = iat;
      if (iats == 0 || iat > max_iat) max_iat = iat;
      iat_sum += iat;
      iat_sq_sum += static_cast<unsigned __int128>(iat) * iat;
      ++iats;
    } else {
      first_ts = pkt.ts_us;
      min_size = pkt.size;
      max_size = pkt.size;
    }
    last_ts = pkt.ts_us;
    ++pkts;
    bytes += pkt.size;
    if (pkt.size < min_size) min_size = pkt.size;
    if (pkt.size > max_size) max_size = pkt.size;
    if (pkt.flags & FLAG_SYN) ++syn;
    if (pkt.flags & FLAG_FIN) ++fin;
    if (pkt.flags & FLAG_RST) ++rst;
    if (pkt.dir == Direction::fwd) {
      ++fwd;
      fwd_bytes += pkt.size;
    } else {
      ++bwd;
    }
  }

  // Fixed-point extraction; means are floor-divided, values saturate at the
  // bit-width maximum and are never negative.
  uint64_t extract(FeatureId id, unsigned bit_width) const {
    uint64_t v = 0;
    switch (id) {
      case F_PKT_COUNT: v = pkts; break;
      case F_BYTE_SUM: v = bytes; break;
      case F_MIN_SIZE: v = min_size; break;
      case F_MAX_SIZE: v = max_size; break;
      case F_MEAN_SIZE: v = pkts ? bytes / pkts : 0; break;
      case F_MIN_IAT: v = min_iat; break;
      case F_MAX_IAT: v = max_iat; break;
      case F_MEAN_IAT: v = iats ? iat_sum / iats : 0; break;
      case F_VAR_IAT: {
        if (!iats) return 0;
        uint64_t m = iat_sum / iats;
        unsigned __int128 q = iat_sq_sum / iats;
        unsigned __int128 mm = static_cast<unsigned __int128>(m) * m;
        return saturate_u128(q - mm, bit_width);
      }
      case F_SYN_COUNT: v = syn; break;
      case F_FIN_COUNT: v = fin; break;
      case F_RST_COUNT: v = rst; break;
      case F_FWD_COUNT: v = fwd; break;
      case F_BWD_COUNT: v = bwd; break;
      case F_DURATION: v = pkts ? last_ts - first_ts : 0; break;
      case F_MEAN_FWD_SIZE: v = fwd ? fwd_bytes / fwd : 0; break;
      default: throw config_error("unknown feature id");
    }
    return saturate(v, bit_width);
  }
};

inline std::vector<uint64_t> compute_window_features(
    std::span<const PacketRecord> packets, const FeatureCatalog& catalog,
    unsigned bit_width) {
  catalog.validate();
  WindowAccumulator acc;
  for (const auto& pkt : packets) acc.update(pkt);
  std::vector<uint64_t> v(catalog.size());
  for (size_t i = 0; i < catalog.size(); ++i)
    v[i] = acc.extract(static_cast<FeatureId>(i), bit_width);
  return v;
}

// ---------------------------------------------------------------------------
// Partitioned dataset

struct WindowedFlow {
  std::string flow_id;
  uint32_t label = 0;
  std::vector<std::vector<uint64_t>> windows;  // p feature vectors
  std::vector<bool> empty_window;              // flagged zero vectors
};

struct Dataset {
  unsigned p = 1;
  unsigned bit_width = 32;
  std::vector<std::string> feature_names;
  std::vector<WindowedFlow> flows;

  size_t num_features() const { return feature_names.size(); }
};

inline Dataset build_partitioned_dataset(const std::vector<FlowTrace>& traces,
                                         unsigned p,
                                         const FeatureCatalog& catalog,
                                         unsigned bit_width) {
  if (traces.empty()) throw config_error("build_partitioned_dataset: no flows");
  if (p < 1) throw config_error("build_partitioned_dataset: p must be >= 1");
  catalog.validate();

  Dataset ds;
  ds.p = p;
  ds.bit_width = bit_width;
  for (const auto& f : catalog.features) ds.feature_names.push_back(f.name);

  ds.flows.reserve(traces.size());
  for (const auto& tr : traces) {
    WindowedFlow wf;
    wf.flow_id = tr.flow_id;
    wf.label = tr.label;
    auto bounds = window_boundaries(tr.packets.size(), p);
    uint64_t prev = 0;
    for (unsigned j = 0; j < p; ++j) {
      uint64_t hi = bounds[j];
      std::span<const PacketRecord> slice(tr.packets.data() + prev, hi - prev);
      wf.windows.push_back(compute_window_features(slice, catalog, bit_width));
      wf.empty_window.push_back(slice.empty());
      prev = hi;
    }
    ds.flows.push_back(std::move(wf));
  }
  std::sort(ds.flows.begin(), ds.flows.end(),
            [](const WindowedFlow& a, const WindowedFlow& b) {
              return a.flow_id < b.flow_id;
            });
  return ds;
}

// ---------------------------------------------------------------------------
// Flow-trace CSV
//
// Header: flow_id,src,dst,sport,dport,proto,ts_us,size,flags,dir,label
// One row per packet; flags are a letter set drawn from SFARP (e.g. "SA"),
// empty or "-" for none; dir is "fwd" or "bwd".

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline const char* kTraceHeader =
    "flow_id,src,dst,sport,dport,proto,ts_us,size,flags,dir,label";

namespace detail {

inline uint64_t parse_u64(const std::string& s, size_t line_no,
                          const char* what) {
  if (s.empty() || s.size() > 20 ||
      s.find_first_not_of("0123456789") != std::string::npos)
    throw parse_error("line " + std::to_string(line_no) + ": bad " + what +
                      " '" + s + "'");
  try {
    return std::stoull(s);
  } catch (const std::out_of_range&) {
    throw parse_error("line " + std::to_string(line_no) + ": " + what +
                      " out of range");
  }
}

inline uint64_t parse_bounded(const std::string& s, size_t line_no,
                              const char* what, uint64_t max) {
  uint64_t v = parse_u64(s, line_no, what);
  if (v > max)
    throw parse_error("line " + std::to_string(line_no) + ": " + what +
                      " exceeds " + std::to_string(max));
  return v;
}

inline uint8_t parse_flags(const std::string& s, size_t line_no) {
  uint8_t f = 0;
  if (s == "-") return 0;
  for (char c : s) {
    switch (c) {
      case 'S': f |= FLAG_SYN; break;
      case 'F': f |= FLAG_FIN; break;
      case 'A': f |= FLAG_ACK; break;
      case 'R': f |= FLAG_RST; break;
      case 'P': f |= FLAG_PSH; break;
      default:
        throw parse_error("line " + std::to_string(line_no) +
                          ": unknown flag letter '" + std::string(1, c) + "'");
    }
  }
  return f;
}

inline std::string flags_to_string(uint8_t f) {
  std::string s;
  if (f & FLAG_SYN) s += 'S';
  if (f & FLAG_FIN) s += 'F';
  if (f & FLAG_ACK) s += 'A';
  if (f & FLAG_RST) s += 'R';
  if (f & FLAG_PSH) s += 'P';
  return s;
}

}  // namespace detail

inline std::vector<FlowTrace> ingest_trace_stream(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) return {};  // empty file -> empty list
  {
    auto hdr = split_csv_line(line);
    auto want = split_csv_line(kTraceHeader);
    if (hdr != want)
      throw parse_error("line 1: expected header '" +
                        std::string(kTraceHeader) + "'");
  }

  std::vector<FlowTrace> flows;
  std::map<FlowKey, size_t> index;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != 11)
      throw parse_error("line " + std::to_string(line_no) + ": expected 11 fields, got " +
                        std::to_string(f.size()));
    FlowKey key;
    key.src = f[1];
    key.dst = f[2];
    key.sport =
        static_cast<uint16_t>(detail::parse_bounded(f[3], line_no, "sport", 65535));
    key.dport =
        static_cast<uint16_t>(detail::parse_bounded(f[4], line_no, "dport", 65535));
    key.proto =
        static_cast<uint8_t>(detail::parse_bounded(f[5], line_no, "proto", 255));

    PacketRecord pkt;
    pkt.ts_us = detail::parse_u64(f[6], line_no, "ts_us");
    uint64_t size = detail::parse_bounded(f[7], line_no, "size", 0xFFFFFFFFull);
    if (size == 0)
      throw parse_error("line " + std::to_string(line_no) + ": size must be > 0");
    pkt.size = static_cast<uint32_t>(size);
    pkt.flags = detail::parse_flags(f[8], line_no);
    if (f[9] == "fwd")
      pkt.dir = Direction::fwd;
    else if (f[9] == "bwd")
      pkt.dir = Direction::bwd;
    else
      throw parse_error("line " + std::to_string(line_no) + ": dir must be fwd or bwd");
    uint32_t label = static_cast<uint32_t>(detail::parse_u64(f[10], line_no, "label"));

    auto [it, fresh] = index.emplace(key, flows.size());
    if (fresh) {
      FlowTrace tr;
      tr.key = key;
      tr.flow_id = f[0];
      tr.label = label;
      flows.push_back(std::move(tr));
    } else {
      FlowTrace& tr = flows[it->second];
      if (tr.flow_id != f[0])
        throw parse_error("line " + std::to_string(line_no) +
                          ": flow_id '" + f[0] + "' conflicts with '" +
                          tr.flow_id + "' for the same 5-tuple");
      if (tr.label != label)
        throw parse_error("line " + std::to_string(line_no) +
                          ": label conflicts with earlier packets of this flow");
    }
    flows[it->second].packets.push_back(pkt);
  }

  for (auto& tr : flows)
    std::stable_sort(tr.packets.begin(), tr.packets.end(),
                     [](const PacketRecord& a, const PacketRecord& b) {
                       return a.ts_us < b.ts_us;
                     });
  return flows;
}

inline std::vector<FlowTrace> ingest_trace_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw parse_error("cannot open trace file '" + path + "'");
  return ingest_trace_stream(in);
}

inline void write_trace_stream(std::ostream& out,
                               const std::vector<FlowTrace>& flows) {
  out << kTraceHeader << "\n";
  for (const auto& tr : flows) {
    for (const auto& pkt : tr.packets) {
      out << tr.flow_id << ',' << tr.key.src << ',' << tr.key.dst << ','
          << tr.key.sport << ',' << tr.key.dport << ','
          << unsigned(tr.key.proto) << ',' << pkt.ts_us << ',' << pkt.size
          << ',' << detail::flags_to_string(pkt.flags) << ','
          << (pkt.dir == Direction::fwd ? "fwd" : "bwd") << ',' << tr.label
          << "\n";
    }
  }
}

// Dataset CSV: flow_id,window,feat_0..feat_{N-1},label
inline void write_dataset_stream(std::ostream& out, const Dataset& ds) {
  out << "flow_id,window";
  for (size_t i = 0; i < ds.num_features(); ++i) out << ",feat_" << i;
  out << ",label\n";
  for (const auto& wf : ds.flows) {
    for (unsigned j = 0; j < ds.p; ++j) {
      out << wf.flow_id << ',' << j;
      for (uint64_t v : wf.windows[j]) out << ',' << v;
      out << ',' << wf.label << "\n";
    }
  }
}

inline Dataset read_dataset_stream(std::istream& in, unsigned bit_width = 32) {
  std::string line;
  if (!std::getline(in, line)) throw parse_error("dataset file is empty");
  auto hdr = split_csv_line(line);
  if (hdr.size() < 4 || hdr[0] != "flow_id" || hdr[1] != "window" ||
      hdr.back() != "label")
    throw parse_error("line 1: bad dataset header");
  size_t n_feat = hdr.size() - 3;

  Dataset ds;
  ds.bit_width = bit_width;
  for (size_t i = 0; i < n_feat; ++i) ds.feature_names.push_back(hdr[2 + i]);

  std::map<std::string, size_t> index;
  size_t line_no = 1;
  unsigned max_window = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != n_feat + 3)
      throw parse_error("line " + std::to_string(line_no) + ": field count mismatch");
    unsigned window = static_cast<unsigned>(detail::parse_u64(f[1], line_no, "window"));
    max_window = std::max(max_window, window);
    auto [it, fresh] = index.emplace(f[0], ds.flows.size());
    if (fresh) {
      WindowedFlow wf;
      wf.flow_id = f[0];
      wf.label = static_cast<uint32_t>(
          detail::parse_u64(f.back(), line_no, "label"));
      ds.flows.push_back(std::move(wf));
    }
    WindowedFlow& wf = ds.flows[it->second];
    if (wf.windows.size() <= window) {
      wf.windows.resize(window + 1);
      wf.empty_window.resize(window + 1, false);
    }
    std::vector<uint64_t> v(n_feat);
    bool all_zero = true;
    for (size_t i = 0; i < n_feat; ++i) {
      v[i] = detail::parse_u64(f[2 + i], line_no, "feature");
      all_zero = all_zero && v[i] == 0;
    }
    wf.windows[window] = std::move(v);
    wf.empty_window[window] = all_zero;
  }
  ds.p = max_window + 1;
  for (const auto& wf : ds.flows)
    if (wf.windows.size() != ds.p)
      throw parse_error("flow '" + wf.flow_id + "' is missing windows");
  std::sort(ds.flows.begin(), ds.flows.end(),
            [](const WindowedFlow& a, const WindowedFlow& b) {
              return a.flow_id < b.flow_id;
            });
  return ds;
}

inline void write_dataset_file(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw parse_error("cannot write dataset file '" + path + "'");
  write_dataset_stream(out, ds);
}

inline Dataset read_dataset_file(const std::string& path,
                                 unsigned bit_width = 32) {
  std::ifstream in(path);
  if (!in) throw parse_error("cannot open dataset file '" + path + "'");
  return read_dataset_stream(in, bit_width);
}

}  // namespace parttree
