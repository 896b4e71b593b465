#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "parttree/common.hpp"

namespace parttree {

// Fixed-width bit vector for ternary match keys. Bit 0 is the least
// significant bit of word 0; hex rendering is MSB-first and padded to the
// full key width so rule dumps are diff-stable.
class BitString {
 public:
  BitString() = default;
  explicit BitString(unsigned width)
      : width_(width), words_((width + 63) / 64, 0) {}

  static BitString from_u64(uint64_t v, unsigned width) {
    BitString b(width);
    if (!b.words_.empty()) b.words_[0] = v;
    b.trim();
    return b;
  }

  unsigned width() const { return width_; }

  bool get(unsigned i) const {
    return (words_[i / 64] >> (i % 64)) & 1u;
  }

  void set(unsigned i, bool v) {
    if (v)
      words_[i / 64] |= (uint64_t{1} << (i % 64));
    else
      words_[i / 64] &= ~(uint64_t{1} << (i % 64));
  }

  // Write `bits` low bits of v starting at bit offset `at`.
  void set_field(unsigned at, unsigned bits, uint64_t v) {
    for (unsigned i = 0; i < bits; ++i) set(at + i, (v >> i) & 1u);
  }

  uint64_t get_field(unsigned at, unsigned bits) const {
    uint64_t v = 0;
    for (unsigned i = 0; i < bits; ++i)
      if (get(at + i)) v |= (uint64_t{1} << i);
    return v;
  }

  unsigned popcount() const {
    unsigned n = 0;
    for (uint64_t w : words_) n += static_cast<unsigned>(__builtin_popcountll(w));
    return n;
  }

  // Widen to `width` bits; new high bits are zero. Field offsets are
  // anchored at bit 0, so existing fields keep their positions.
  BitString widened(unsigned width) const {
    BitString b(width);
    for (size_t i = 0; i < words_.size() && i < b.words_.size(); ++i)
      b.words_[i] = words_[i];
    b.trim();
    return b;
  }

  // True when `key & mask == value` over the full width.
  static bool ternary_match(const BitString& key, const BitString& value,
                            const BitString& mask) {
    for (size_t i = 0; i < value.words_.size(); ++i) {
      uint64_t k = i < key.words_.size() ? key.words_[i] : 0;
      if ((k & mask.words_[i]) != value.words_[i]) return false;
    }
    return true;
  }

  bool operator==(const BitString& o) const {
    return width_ == o.width_ && words_ == o.words_;
  }

  std::string hex() const {
    static const char* digits = "0123456789abcdef";
    const unsigned nibbles = (width_ + 3) / 4;
    std::string s(nibbles, '0');
    for (unsigned n = 0; n < nibbles; ++n) {
      unsigned v = 0;
      for (unsigned b = 0; b < 4; ++b) {
        unsigned bit = n * 4 + b;
        if (bit < width_ && get(bit)) v |= (1u << b);
      }
      s[nibbles - 1 - n] = digits[v];
    }
    return "0x" + s;
  }

 private:
  void trim() {
    unsigned extra = width_ % 64;
    if (extra && !words_.empty()) words_.back() &= width_max(extra);
  }

  unsigned width_ = 0;
  std::vector<uint64_t> words_;
};

// A (value, mask) prefix over `width` bits: the mask covers the high
// `width - free` bits and the value's masked-out bits are zero.
struct Prefix {
  uint64_t value = 0;
  uint64_t mask = 0;
  unsigned width = 0;

  bool contains(uint64_t x) const { return (x & mask) == value; }
  unsigned care_bits() const {
    return static_cast<unsigned>(__builtin_popcountll(mask));
  }
};

// Minimal disjoint prefix cover of the inclusive interval [lo, hi].
// Repeatedly takes the largest aligned block that starts at lo and stays
// within hi; the resulting cover is the unique minimal one.
inline std::vector<Prefix> interval_to_prefixes(uint64_t lo, uint64_t hi,
                                                unsigned width) {
  if (width == 0 || width > 64) throw config_error("prefix width out of range");
  if (lo > hi) throw config_error("interval_to_prefixes: lo > hi");
  if (hi > width_max(width))
    throw config_error("interval_to_prefixes: bound exceeds width");

  std::vector<Prefix> out;
  const uint64_t full = width_max(width);
  if (lo == 0 && hi == full) {
    out.push_back(Prefix{0, 0, width});
    return out;
  }
  uint64_t cur = lo;
  while (true) {
    unsigned s = 0;
    while (s < width) {
      uint64_t block = uint64_t{1} << (s + 1);
      if (s + 1 > 63) break;
      if ((cur & (block - 1)) != 0) break;                 // alignment
      if (block - 1 > hi - cur) break;                     // fits in [cur,hi]
      ++s;
    }
    uint64_t size_mask = (s >= 64) ? ~uint64_t{0} : ((uint64_t{1} << s) - 1);
    Prefix p;
    p.width = width;
    p.mask = full & ~size_mask;
    p.value = cur & p.mask;
    out.push_back(p);
    uint64_t top = cur | size_mask;
    if (top >= hi) break;
    cur = top + 1;
  }
  return out;
}

// CRC-32 (IEEE 802.3, reflected, poly 0xEDB88320) over a byte string.
inline uint32_t crc32(const void* data, size_t len) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k)
        c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : (c >> 1);
      t[i] = c;
    }
    return t;
  }();
  uint32_t c = 0xFFFFFFFFu;
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) c = table[(c ^ p[i]) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

inline uint32_t crc32(const std::string& s) { return crc32(s.data(), s.size()); }

}  // namespace parttree
