#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

namespace parttree {

// Error taxonomy used across the library. The CLI maps these onto exit codes:
// parse_error -> 2 (input format), config_error -> 2, integrity_error -> 4.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input file; message carries the offending line number when known.
struct parse_error : error {
  using error::error;
};

// Invalid configuration (bad partition sizes, k = 0, unknown operator, ...).
struct config_error : error {
  using error::error;
};

// A contract that compiled artifacts must uphold was violated (routing gap,
// TCAM lookup miss on exhaustive tables, ...).
struct integrity_error : error {
  using error::error;
};

inline uint64_t width_max(unsigned bits) {
  return bits >= 64 ? std::numeric_limits<uint64_t>::max()
                    : ((uint64_t{1} << bits) - 1);
}

// Clamp a raw accumulator value into an unsigned field of `bits` width.
inline uint64_t saturate(uint64_t v, unsigned bits) {
  const uint64_t cap = width_max(bits);
  return v > cap ? cap : v;
}

inline uint64_t saturate_u128(unsigned __int128 v, unsigned bits) {
  const uint64_t cap = width_max(bits);
  return v > cap ? cap : static_cast<uint64_t>(v);
}

// splitmix64; used to derive independent sub-seeds from one master seed so
// that every random draw in the system descends from a single CLI seed.
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::mt19937_64 make_rng(uint64_t seed, uint64_t stream = 0) {
  return std::mt19937_64{mix_seed(seed, stream)};
}

}  // namespace parttree
