// Two-party Boolean MPC: XOR shares, Beaver triples, base oblivious
// transfer, and the bitsliced GMW sign-test (DReLU) circuit.
//
// Everything here works on word-packed bit vectors: element j lives in bit
// j%64 of word j/64.  An "AND" in the cost formulas below means one secure
// AND gate per element; the engine evaluates 64 of them per triple word.
//
// The DReLU circuit over Z_p with w = bit_width(p-1) consumes exactly
// 5*w + 1 AND gates per element:
//   w      ripple-carry add of the two additive shares (u = x0 + x1),
//   w+1    public-constant add of K = 2^(w+1) - p (carry d = [u >= p]),
//   w      mux z = d ? u - p : u (one layer; all bits share d),
//   w      public-constant add of M = 2^w - (p-1)/2 - 1 (carry = [z > (p-1)/2]),
//   w-1    nonzero test: OR-tree over the bits of z,
//   1      final AND of the two predicates.
// The implementation asserts this count against its own triple consumption.
#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "qj/ring.hpp"
#include "qj/rng.hpp"
#include "qj/transport.hpp"

namespace qj {

// ---------------------------------------------------------------------------
// Word-packed bit utilities.

inline size_t bit_words(size_t nbits) { return (nbits + 63) / 64; }

inline bool get_bit(std::span<const uint64_t> words, size_t i) {
  return (words[i / 64] >> (i % 64)) & 1;
}
inline void set_bit(std::span<uint64_t> words, size_t i, bool v) {
  if (v)
    words[i / 64] |= 1ull << (i % 64);
  else
    words[i / 64] &= ~(1ull << (i % 64));
}

// Additive sharing of residue vectors: x = s0 + s1 (mod p).
void share_vec(SeededRng& rng, const Modulus& mod, std::span<const uint64_t> x,
               std::span<uint64_t> s0, std::span<uint64_t> s1);
void reconstruct_vec(const Modulus& mod, std::span<const uint64_t> s0,
                     std::span<const uint64_t> s1, std::span<uint64_t> x);

// ---------------------------------------------------------------------------
// Beaver triples over GF(2), word-packed and streamed.

class TripleSource {
 public:
  virtual ~TripleSource() = default;
  // Fills n words of this party's shares of random triples satisfying
  // (a0^a1) & (b0^b1) == (c0^c1).
  virtual void next(size_t n_words, uint64_t* a, uint64_t* b, uint64_t* c) = 0;
  // Generates material for n words up front (communication, if any, happens
  // here so later next() calls are local).  No-op for the dealer source.
  virtual void prefill(size_t n_words) { (void)n_words; }

  uint64_t words_consumed() const { return consumed_; }

 protected:
  uint64_t consumed_ = 0;
};

// Trusted-dealer stream: both parties derive the same triple stream from a
// common dealer seed and keep only their own halves.  No communication and
// no materialized pools -- chunks are produced on demand.
class DealerTripleSource final : public TripleSource {
 public:
  DealerTripleSource(uint64_t dealer_seed, int party);
  void next(size_t n_words, uint64_t* a, uint64_t* b, uint64_t* c) override;

 private:
  void refill();
  SeededRng rng_;
  int party_;
  std::vector<uint64_t> buf_a_, buf_b_, buf_c_;
  size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Base oblivious transfer (Chou-Orlandi over ristretto255, via libsodium).
//
// One-bit messages; one group element per transfer on the receiver side.
// The sender transmits its public point once, the receiver answers with one
// point per choice bit, and the sender finishes with masked message pairs.
// Lockstep order: sender writes first.

void ot_send_bits(Link& link, std::span<const uint8_t> m0, std::span<const uint8_t> m1,
                  Category cat, SeededRng& rng);
std::vector<uint8_t> ot_recv_bits(Link& link, std::span<const uint8_t> choice, Category cat,
                                  SeededRng& rng);

// OT-based triple generation: two base OTs per triple bit (one per cross
// term).  Intended for small, test-scale counts; use the dealer stream for
// bulk runs.  prefill() performs the transfers; next() then serves locally.
class OtTripleSource final : public TripleSource {
 public:
  // party 0 attaches to the client side of the link, party 1 to the server.
  OtTripleSource(Link& link, int party, uint64_t seed, Category cat);
  void next(size_t n_words, uint64_t* a, uint64_t* b, uint64_t* c) override;
  void prefill(size_t n_words) override;

  uint64_t ots_performed() const { return ots_; }

 private:
  void generate(size_t n_words);
  Link& link_;
  int party_;
  SeededRng rng_;
  Category cat_;
  std::vector<uint64_t> buf_a_, buf_b_, buf_c_;
  size_t pos_ = 0;
  uint64_t ots_ = 0;
};

// ---------------------------------------------------------------------------
// GMW evaluation context.

struct GmwStats {
  uint64_t and_words = 0;  // triple words consumed
  uint64_t layers = 0;     // communication layers (one exchange each)
};

class GmwContext {
 public:
  GmwContext(Link& link, TripleSource& triples, int party, Category cat);

  // One communication layer evaluating z = x & y on XOR shares, elementwise
  // over word-packed planes.  Independent gates are batched by concatenating
  // their planes into the spans.  Lockstep order: party 0 writes first.
  void and_layer(std::span<const uint64_t> x, std::span<const uint64_t> y,
                 std::span<uint64_t> z);

  int party() const { return party_; }
  Link& link() { return link_; }
  Category category() const { return cat_; }
  const GmwStats& stats() const { return stats_; }

 private:
  Link& link_;
  TripleSource& triples_;
  int party_;
  Category cat_;
  GmwStats stats_;
};

// Number of AND gates per element of the DReLU circuit at modulus p.
inline uint64_t drelu_and_gates(const Modulus& mod) {
  return 5ull * std::bit_width(mod.p - 1) + 1;
}
// Triple words one batch of n elements will consume.
inline uint64_t drelu_triple_words(const Modulus& mod, size_t n) {
  return drelu_and_gates(mod) * bit_words(n);
}

// Evaluates DReLU on additive shares: returns this party's XOR share of
// h[j] = [ signed_lift(x[j]) > 0 ], one byte (0/1) per element.  Both
// parties call this in lockstep with their own share vector.  The client
// share is re-randomized before output: the server draws fresh output bits
// and sends the correction, so the client's share is independent of the
// circuit transcript.  drelu(0) = 0.
//
// The server either draws its fresh output share from `rng`, or -- when
// `server_fresh_words` is non-empty (word-packed, bit_words(n) words) --
// adopts exactly those pre-drawn bits, which lets material that depends on
// the server's output share be prepared ahead of the evaluation.  The
// client passes an empty span.
std::vector<uint8_t> drelu_gmw(GmwContext& ctx, const Modulus& mod,
                               std::span<const uint64_t> x_share, SeededRng& rng,
                               std::span<const uint64_t> server_fresh_words = {});

}  // namespace qj
