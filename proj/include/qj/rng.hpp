// Deterministic, replay-safe randomness.
//
// All protocol randomness flows through SeededRng so that a session seed fully
// determines every transcript byte.  Values are drawn from raw mt19937_64
// outputs with rejection sampling; std::uniform_int_distribution is
// implementation-defined and would break cross-run replay checks.
#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace qj {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent child seed from a root seed and a label path,
// e.g. derive_seed(session, party_id, input_index, role_tag).
template <class... Labels>
uint64_t derive_seed(uint64_t root, Labels... labels) {
  uint64_t s = splitmix64(root);
  ((s = splitmix64(s ^ splitmix64(static_cast<uint64_t>(labels) + 0x517cc1b727220a95ULL))), ...);
  return s;
}

class SeededRng {
 public:
  explicit SeededRng(uint64_t seed) : eng_(seed) {}

  uint64_t u64() { return eng_(); }

  bool bit() { return (u64() & 1u) != 0; }

  // Uniform in [0, bound), bound >= 1, via rejection sampling.
  uint64_t below(uint64_t bound) {
    if (bound <= 1) return 0;
    // 2^64 mod bound: draws below this threshold are rejected so that the
    // accepted range is an exact multiple of bound.
    const uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const uint64_t r = u64();
      if (r >= threshold) return r % bound;
    }
  }

  void fill_below(std::span<uint64_t> out, uint64_t bound) {
    for (auto& v : out) v = below(bound);
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace qj
