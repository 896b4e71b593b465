#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "parttree/common.hpp"
#include "parttree/flowdata.hpp"

namespace parttree {

// Seeded synthetic trace with window-localized class structure: the class id
// is two bits, each visible only in the placement of flag packets within one
// quarter of the flow. Whole-flow aggregates see identical flag counts for
// every class, so a monolithic tree can only pick up the weak size shift,
// while per-window features separate the classes cleanly.
//
//   bit 0 -> two RST packets in quarter 1 (set) or quarter 0 (clear)
//   bit 1 -> three SYN packets in quarter 3 (set) or quarter 2 (clear)
//   bit 0 also shifts quarter-1 packet sizes upward (weak global signal)
struct SynthSpec {
  uint64_t seed = 1;
  uint32_t flows_per_class = 150;
  uint32_t packets_per_flow = 16;  // multiple of 4
  uint32_t classes = 4;            // 2 signal bits
};

inline std::vector<FlowTrace> synth_traces(const SynthSpec& spec) {
  if (spec.packets_per_flow % 4 != 0 || spec.packets_per_flow == 0)
    throw config_error("packets_per_flow must be a positive multiple of 4");
  if (spec.classes != 4) throw config_error("synth generator emits 4 classes");

  auto rng = make_rng(spec.seed, 0x5eed);
  std::uniform_int_distribution<uint32_t> size_noise(200, 1400);
  std::uniform_int_distribution<uint32_t> size_shifted(600, 1400);
  std::uniform_int_distribution<uint64_t> iat(1000, 3000);
  std::uniform_int_distribution<int> coin(0, 1);

  const uint32_t quarter = spec.packets_per_flow / 4;
  std::vector<FlowTrace> flows;
  uint32_t counter = 0;
  for (uint32_t i = 0; i < spec.flows_per_class; ++i) {
    for (uint32_t cls = 0; cls < spec.classes; ++cls) {
      const bool b0 = cls & 1;
      const bool b1 = cls & 2;
      FlowTrace tr;
      char idbuf[16];
      std::snprintf(idbuf, sizeof idbuf, "f%05u", counter);
      tr.flow_id = idbuf;
      tr.label = cls;
      tr.key.src = "10.0." + std::to_string(counter / 250) + "." +
                   std::to_string(counter % 250 + 1);
      tr.key.dst = "10.1.0.1";
      tr.key.sport = static_cast<uint16_t>(1024 + counter % 50000);
      tr.key.dport = 443;
      tr.key.proto = 6;

      const uint32_t rst_quarter = b0 ? 1 : 0;
      const uint32_t syn_quarter = b1 ? 3 : 2;
      uint64_t ts = uint64_t{counter} * 1000;
      for (uint32_t p = 0; p < spec.packets_per_flow; ++p) {
        const uint32_t q = p / quarter;
        const uint32_t pos = p % quarter;
        PacketRecord pkt;
        pkt.ts_us = ts;
        ts += iat(rng);
        pkt.size = (b0 && q == 1) ? size_shifted(rng) : size_noise(rng);
        pkt.dir = (p == 0 || coin(rng)) ? Direction::fwd : Direction::bwd;
        pkt.flags = FLAG_ACK;
        if (q == rst_quarter && pos < 2) pkt.flags |= FLAG_RST;
        if (q == syn_quarter && pos < 3) pkt.flags |= FLAG_SYN;
        tr.packets.push_back(pkt);
      }
      flows.push_back(std::move(tr));
      ++counter;
    }
  }
  return flows;
}

}  // namespace parttree
