#include "qj/mpc.hpp"

#include <sodium.h>

#include <algorithm>
#include <cassert>
#include <cstring>
#include <mutex>
#include <stdexcept>

namespace qj {

namespace {

void ensure_sodium() {
  static std::once_flag flag;
  std::call_once(flag, [] {
    if (sodium_init() < 0) throw std::runtime_error("libsodium initialization failed");
  });
}

std::vector<uint8_t> words_to_bytes(std::span<const uint64_t> a, std::span<const uint64_t> b) {
  std::vector<uint8_t> out(16 * a.size());
  for (size_t i = 0; i < a.size(); ++i)
    for (int k = 0; k < 8; ++k) {
      out[8 * i + k] = static_cast<uint8_t>(a[i] >> (8 * k));
      out[8 * (a.size() + i) + k] = static_cast<uint8_t>(b[i] >> (8 * k));
    }
  return out;
}

void bytes_to_words(std::span<const uint8_t> in, std::span<uint64_t> a, std::span<uint64_t> b) {
  if (in.size() != 16 * a.size()) throw std::runtime_error("gmw: bad layer message size");
  for (size_t i = 0; i < a.size(); ++i) {
    uint64_t va = 0, vb = 0;
    for (int k = 7; k >= 0; --k) {
      va = (va << 8) | in[8 * i + k];
      vb = (vb << 8) | in[8 * (a.size() + i) + k];
    }
    a[i] = va;
    b[i] = vb;
  }
}

}  // namespace

// ---------------------------------------------------------------------------

void share_vec(SeededRng& rng, const Modulus& mod, std::span<const uint64_t> x,
               std::span<uint64_t> s0, std::span<uint64_t> s1) {
  if (x.size() != s0.size() || x.size() != s1.size())
    throw std::invalid_argument("share_vec: length mismatch");
  for (size_t i = 0; i < x.size(); ++i) {
    s1[i] = rng.below(mod.p);
    s0[i] = mod.sub(x[i], s1[i]);
  }
}

void reconstruct_vec(const Modulus& mod, std::span<const uint64_t> s0,
                     std::span<const uint64_t> s1, std::span<uint64_t> x) {
  if (s0.size() != s1.size() || s0.size() != x.size())
    throw std::invalid_argument("reconstruct_vec: length mismatch");
  for (size_t i = 0; i < s0.size(); ++i) x[i] = mod.add(s0[i], s1[i]);
}

// ---------------------------------------------------------------------------

DealerTripleSource::DealerTripleSource(uint64_t dealer_seed, int party)
    : rng_(derive_seed(dealer_seed, 0x7472697065ull)), party_(party) {
  if (party != 0 && party != 1) throw std::invalid_argument("triple source: party must be 0/1");
}

void DealerTripleSource::refill() {
  constexpr size_t kChunk = 4096;
  buf_a_.resize(kChunk);
  buf_b_.resize(kChunk);
  buf_c_.resize(kChunk);
  for (size_t i = 0; i < kChunk; ++i) {
    const uint64_t a0 = rng_.u64(), a1 = rng_.u64();
    const uint64_t b0 = rng_.u64(), b1 = rng_.u64();
    const uint64_t c0 = rng_.u64();
    const uint64_t c1 = ((a0 ^ a1) & (b0 ^ b1)) ^ c0;
    buf_a_[i] = party_ == 0 ? a0 : a1;
    buf_b_[i] = party_ == 0 ? b0 : b1;
    buf_c_[i] = party_ == 0 ? c0 : c1;
  }
  pos_ = 0;
}

void DealerTripleSource::next(size_t n_words, uint64_t* a, uint64_t* b, uint64_t* c) {
  size_t done = 0;
  while (done < n_words) {
    if (pos_ == buf_a_.size()) refill();
    const size_t take = std::min(n_words - done, buf_a_.size() - pos_);
    std::memcpy(a + done, buf_a_.data() + pos_, take * 8);
    std::memcpy(b + done, buf_b_.data() + pos_, take * 8);
    std::memcpy(c + done, buf_c_.data() + pos_, take * 8);
    pos_ += take;
    done += take;
  }
  consumed_ += n_words;
}

// ---------------------------------------------------------------------------
// Chou-Orlandi base OT.

namespace {

constexpr size_t kPoint = 32;

// Derives the pad bit for transfer index i, branch `which`, from a shared
// group element.
uint8_t pad_bit(const uint8_t* point, uint64_t i, uint8_t which) {
  uint8_t in[kPoint + 9];
  std::memcpy(in, point, kPoint);
  for (int k = 0; k < 8; ++k) in[kPoint + k] = static_cast<uint8_t>(i >> (8 * k));
  in[kPoint + 8] = which;
  uint8_t out[16];
  if (crypto_generichash(out, sizeof(out), in, sizeof(in), nullptr, 0) != 0)
    throw std::runtime_error("ot: hash failed");
  return out[0] & 1;
}

void random_scalar(SeededRng& rng, uint8_t* scalar) {
  uint8_t wide[64];
  for (int k = 0; k < 8; ++k) {
    const uint64_t v = rng.u64();
    for (int j = 0; j < 8; ++j) wide[8 * k + j] = static_cast<uint8_t>(v >> (8 * j));
  }
  crypto_core_ristretto255_scalar_reduce(scalar, wide);
}

}  // namespace

void ot_send_bits(Link& link, std::span<const uint8_t> m0, std::span<const uint8_t> m1,
                  Category cat, SeededRng& rng) {
  ensure_sodium();
  if (m0.size() != m1.size()) throw std::invalid_argument("ot_send_bits: length mismatch");
  const size_t n = m0.size();
  uint8_t a[kPoint], A[kPoint];
  random_scalar(rng, a);
  if (crypto_scalarmult_ristretto255_base(A, a) != 0)
    throw std::runtime_error("ot: degenerate sender scalar");
  link.send(FrameType::drelu, std::span<const uint8_t>(A, kPoint), cat);

  const Frame bs = link.recv(FrameType::drelu, cat);
  if (bs.payload.size() != n * kPoint) throw std::runtime_error("ot: bad receiver batch size");

  std::vector<uint8_t> corrections(2 * n);
  for (size_t i = 0; i < n; ++i) {
    const uint8_t* B = bs.payload.data() + i * kPoint;
    uint8_t aB[kPoint], BmA[kPoint], aBmA[kPoint];
    if (crypto_scalarmult_ristretto255(aB, a, B) != 0)
      throw std::runtime_error("ot: degenerate receiver point");
    crypto_core_ristretto255_sub(BmA, B, A);
    if (crypto_scalarmult_ristretto255(aBmA, a, BmA) != 0)
      throw std::runtime_error("ot: degenerate receiver point");
    corrections[2 * i] = static_cast<uint8_t>((m0[i] & 1) ^ pad_bit(aB, i, 0));
    corrections[2 * i + 1] = static_cast<uint8_t>((m1[i] & 1) ^ pad_bit(aBmA, i, 1));
  }
  link.send(FrameType::drelu, corrections, cat);
}

std::vector<uint8_t> ot_recv_bits(Link& link, std::span<const uint8_t> choice, Category cat,
                                  SeededRng& rng) {
  ensure_sodium();
  const size_t n = choice.size();
  const Frame fa = link.recv(FrameType::drelu, cat);
  if (fa.payload.size() != kPoint) throw std::runtime_error("ot: bad sender point size");
  const uint8_t* A = fa.payload.data();

  std::vector<uint8_t> scalars(n * kPoint), batch(n * kPoint);
  for (size_t i = 0; i < n; ++i) {
    uint8_t* r = scalars.data() + i * kPoint;
    uint8_t* B = batch.data() + i * kPoint;
    random_scalar(rng, r);
    if (crypto_scalarmult_ristretto255_base(B, r) != 0)
      throw std::runtime_error("ot: degenerate receiver scalar");
    if (choice[i] & 1) {
      uint8_t sum[kPoint];
      if (crypto_core_ristretto255_add(sum, B, A) != 0)
        throw std::runtime_error("ot: point addition failed");
      std::memcpy(B, sum, kPoint);
    }
  }
  link.send(FrameType::drelu, batch, cat);

  const Frame fc = link.recv(FrameType::drelu, cat);
  if (fc.payload.size() != 2 * n) throw std::runtime_error("ot: bad correction size");
  std::vector<uint8_t> out(n);
  for (size_t i = 0; i < n; ++i) {
    uint8_t rA[kPoint];
    if (crypto_scalarmult_ristretto255(rA, scalars.data() + i * kPoint, A) != 0)
      throw std::runtime_error("ot: degenerate sender point");
    const uint8_t b = choice[i] & 1;
    out[i] = static_cast<uint8_t>(fc.payload[2 * i + b] ^ pad_bit(rA, i, b));
  }
  return out;
}

// ---------------------------------------------------------------------------

OtTripleSource::OtTripleSource(Link& link, int party, uint64_t seed, Category cat)
    : link_(link), party_(party), rng_(derive_seed(seed, 0x6f74ull, party)), cat_(cat) {
  if (party != 0 && party != 1) throw std::invalid_argument("triple source: party must be 0/1");
}

void OtTripleSource::generate(size_t n_words) {
  const size_t n_bits = 64 * n_words;
  std::vector<uint64_t> a(n_words), b(n_words), c(n_words);
  for (auto& w : a) w = rng_.u64();
  for (auto& w : b) w = rng_.u64();

  std::vector<uint8_t> my_a_bits(n_bits), my_b_bits(n_bits);
  for (size_t i = 0; i < n_bits; ++i) {
    my_a_bits[i] = static_cast<uint8_t>(get_bit(a, i));
    my_b_bits[i] = static_cast<uint8_t>(get_bit(b, i));
  }

  // Cross term x0&y1 (party 1 sends), then x1&y0 (party 0 sends): each party
  // masks its b-bits behind fresh pads, the other selects with its a-bits.
  std::vector<uint8_t> got;        // received selections (my a & their b ^ their pad)
  std::vector<uint8_t> pads(n_bits);  // my pads from the OT where I was sender
  for (auto& x : pads) x = static_cast<uint8_t>(rng_.bit());
  std::vector<uint8_t> masked(n_bits);
  for (size_t i = 0; i < n_bits; ++i) masked[i] = static_cast<uint8_t>(pads[i] ^ my_b_bits[i]);

  if (party_ == 1) {
    ot_send_bits(link_, pads, masked, cat_, rng_);
    got = ot_recv_bits(link_, my_a_bits, cat_, rng_);
  } else {
    got = ot_recv_bits(link_, my_a_bits, cat_, rng_);
    ot_send_bits(link_, pads, masked, cat_, rng_);
  }
  ots_ += 2 * n_bits;

  for (size_t i = 0; i < n_words; ++i) c[i] = a[i] & b[i];
  for (size_t i = 0; i < n_bits; ++i) {
    const uint8_t cross = static_cast<uint8_t>(got[i] ^ pads[i]);
    if (cross & 1) c[i / 64] ^= 1ull << (i % 64);
  }

  buf_a_.insert(buf_a_.end(), a.begin(), a.end());
  buf_b_.insert(buf_b_.end(), b.begin(), b.end());
  buf_c_.insert(buf_c_.end(), c.begin(), c.end());
}

void OtTripleSource::prefill(size_t n_words) {
  const size_t have = buf_a_.size() - pos_;
  if (n_words > have) generate(n_words - have);
}

void OtTripleSource::next(size_t n_words, uint64_t* a, uint64_t* b, uint64_t* c) {
  prefill(n_words);
  std::memcpy(a, buf_a_.data() + pos_, n_words * 8);
  std::memcpy(b, buf_b_.data() + pos_, n_words * 8);
  std::memcpy(c, buf_c_.data() + pos_, n_words * 8);
  pos_ += n_words;
  consumed_ += n_words;
  if (pos_ == buf_a_.size()) {
    buf_a_.clear();
    buf_b_.clear();
    buf_c_.clear();
    pos_ = 0;
  }
}

// ---------------------------------------------------------------------------

GmwContext::GmwContext(Link& link, TripleSource& triples, int party, Category cat)
    : link_(link), triples_(triples), party_(party), cat_(cat) {
  if (party != 0 && party != 1) throw std::invalid_argument("gmw: party must be 0/1");
}

void GmwContext::and_layer(std::span<const uint64_t> x, std::span<const uint64_t> y,
                           std::span<uint64_t> z) {
  const size_t len = x.size();
  if (y.size() != len || z.size() != len) throw std::invalid_argument("gmw: plane length mismatch");
  std::vector<uint64_t> a(len), b(len), c(len);
  triples_.next(len, a.data(), b.data(), c.data());

  std::vector<uint64_t> d(len), e(len);
  for (size_t i = 0; i < len; ++i) {
    d[i] = x[i] ^ a[i];
    e[i] = y[i] ^ b[i];
  }
  const auto mine = words_to_bytes(d, e);
  std::vector<uint64_t> dt(len), et(len);
  if (party_ == 0) {
    link_.send(FrameType::drelu, mine, cat_);
    const Frame f = link_.recv(FrameType::drelu, cat_);
    bytes_to_words(f.payload, dt, et);
  } else {
    const Frame f = link_.recv(FrameType::drelu, cat_);
    link_.send(FrameType::drelu, mine, cat_);
    bytes_to_words(f.payload, dt, et);
  }
  for (size_t i = 0; i < len; ++i) {
    const uint64_t D = d[i] ^ dt[i];
    const uint64_t E = e[i] ^ et[i];
    uint64_t v = c[i] ^ (D & b[i]) ^ (E & a[i]);
    if (party_ == 0) v ^= D & E;
    z[i] = v;
  }
  stats_.and_words += len;
  stats_.layers += 1;
}

// ---------------------------------------------------------------------------
// DReLU circuit.

namespace {

using Plane = std::vector<uint64_t>;

void xor_into(Plane& dst, const Plane& src) {
  for (size_t i = 0; i < dst.size(); ++i) dst[i] ^= src[i];
}

Plane xor_of(const Plane& a, const Plane& b) {
  Plane out(a);
  xor_into(out, b);
  return out;
}

// XOR with a public all-ones plane: only party 0 flips, so the shared value
// is complemented without interaction.
void flip_public(Plane& p, int party) {
  if (party == 0)
    for (auto& w : p) w = ~w;
}

// Carry chain of adding a public constant k (bit-indexed) to a shared value:
// one AND layer per bit position.  Returns the carry-out share.
Plane public_add_carry(GmwContext& ctx, const std::vector<Plane>& bits, uint64_t k, int count,
                       std::vector<Plane>* sum_out) {
  const size_t nw = bits[0].size();
  Plane carry(nw, 0);
  for (int i = 0; i < count; ++i) {
    const bool ki = (k >> i) & 1;
    if (sum_out) {
      Plane s = xor_of(bits[i], carry);
      if (ki) flip_public(s, ctx.party());
      (*sum_out)[i] = std::move(s);
    }
    Plane t(nw);
    ctx.and_layer(bits[i], carry, t);
    if (ki) {
      // carry' = u | c = u ^ c ^ (u & c)
      xor_into(t, bits[i]);
      xor_into(t, carry);
    }
    carry = std::move(t);
  }
  return carry;
}

}  // namespace

std::vector<uint8_t> drelu_gmw(GmwContext& ctx, const Modulus& mod,
                               std::span<const uint64_t> x_share, SeededRng& rng,
                               std::span<const uint64_t> server_fresh_words) {
  const size_t n = x_share.size();
  const int w = static_cast<int>(std::bit_width(mod.p - 1));
  const size_t nw = bit_words(n);
  const uint64_t words_before = ctx.stats().and_words;
  const int party = ctx.party();

  // Bit-plane shares of the two addends: party 0 contributes the A operand,
  // party 1 the B operand; the other side of each is an all-zero share.
  std::vector<Plane> A(w, Plane(nw, 0)), B(w, Plane(nw, 0));
  auto& mine = party == 0 ? A : B;
  for (size_t j = 0; j < n; ++j) {
    const uint64_t v = x_share[j];
    if (v >= mod.p) throw std::invalid_argument("drelu: share out of range");
    for (int i = 0; i < w; ++i)
      if ((v >> i) & 1) mine[i][j / 64] |= 1ull << (j % 64);
  }

  // 1) u = x0 + x1 over w+1 bits (ripple carry, w AND layers).
  std::vector<Plane> U(w + 1, Plane(nw, 0));
  Plane carry(nw, 0);
  U[0] = xor_of(A[0], B[0]);
  ctx.and_layer(A[0], B[0], carry);
  for (int i = 1; i < w; ++i) {
    U[i] = xor_of(xor_of(A[i], B[i]), carry);
    // carry' = maj(a,b,c) = ((a^c) & (b^c)) ^ c
    Plane t(nw);
    ctx.and_layer(xor_of(A[i], carry), xor_of(B[i], carry), t);
    xor_into(t, carry);
    carry = std::move(t);
  }
  U[w] = std::move(carry);

  // 2) v = u + K over w+1 bits, K = 2^(w+1) - p; carry-out d = [u >= p].
  const uint64_t K = (1ull << (w + 1)) - mod.p;
  std::vector<Plane> V(w + 1);
  Plane d = public_add_carry(ctx, U, K, w + 1, &V);

  // 3) z = d ? v : u over the low w bits (u mod p); one batched AND layer.
  std::vector<uint64_t> xs(static_cast<size_t>(w) * nw), ys(xs.size()), zs(xs.size());
  for (int i = 0; i < w; ++i) {
    std::copy(d.begin(), d.end(), xs.begin() + static_cast<size_t>(i) * nw);
    const Plane uv = xor_of(U[i], V[i]);
    std::copy(uv.begin(), uv.end(), ys.begin() + static_cast<size_t>(i) * nw);
  }
  ctx.and_layer(xs, ys, zs);
  std::vector<Plane> Z(w, Plane(nw));
  for (int i = 0; i < w; ++i) {
    std::copy(zs.begin() + static_cast<size_t>(i) * nw,
              zs.begin() + static_cast<size_t>(i + 1) * nw, Z[i].begin());
    xor_into(Z[i], U[i]);
  }

  // 4) g = [z <= (p-1)/2]: complement of the carry of z + M over w bits,
  //    M = 2^w - (p-1)/2 - 1.
  const uint64_t M = (1ull << w) - (mod.p - 1) / 2 - 1;
  Plane g = public_add_carry(ctx, Z, M, w, nullptr);
  flip_public(g, party);

  // 5) nz = [z != 0] via De Morgan: complement of the AND-tree of the
  //    complemented bits (w-1 ANDs in ceil(log2 w) batched layers).
  std::vector<Plane> level = Z;
  for (auto& pl : level) flip_public(pl, party);
  while (level.size() > 1) {
    const size_t pairs = level.size() / 2;
    std::vector<uint64_t> px(pairs * nw), py(pairs * nw), pz(pairs * nw);
    for (size_t k = 0; k < pairs; ++k) {
      std::copy(level[2 * k].begin(), level[2 * k].end(), px.begin() + k * nw);
      std::copy(level[2 * k + 1].begin(), level[2 * k + 1].end(), py.begin() + k * nw);
    }
    ctx.and_layer(px, py, pz);
    std::vector<Plane> next_level(pairs + level.size() % 2, Plane(nw));
    for (size_t k = 0; k < pairs; ++k)
      std::copy(pz.begin() + k * nw, pz.begin() + (k + 1) * nw, next_level[k].begin());
    if (level.size() % 2) next_level.back() = std::move(level.back());
    level = std::move(next_level);
  }
  Plane nz = std::move(level[0]);
  flip_public(nz, party);

  // 6) h = nz & g.
  Plane h(nw);
  ctx.and_layer(nz, g, h);

  assert(ctx.stats().and_words - words_before == drelu_and_gates(mod) * nw);
  (void)words_before;

  // Output re-randomization: the server replaces its share with fresh bits
  // and sends the correction, so the client share is independent of the
  // transcript above.
  if (party == 1) {
    Plane fresh(nw);
    if (!server_fresh_words.empty()) {
      if (server_fresh_words.size() < nw)
        throw std::invalid_argument("drelu: pre-drawn share is too short");
      std::copy_n(server_fresh_words.begin(), nw, fresh.begin());
    } else {
      for (auto& wd : fresh) wd = rng.u64();
    }
    Plane delta = xor_of(h, fresh);
    std::vector<uint8_t> msg(nw * 8);
    for (size_t i = 0; i < nw; ++i)
      for (int k = 0; k < 8; ++k) msg[8 * i + k] = static_cast<uint8_t>(delta[i] >> (8 * k));
    ctx.link().send(FrameType::drelu, msg, ctx.category());
    h = std::move(fresh);
  } else {
    const Frame f = ctx.link().recv(FrameType::drelu, ctx.category());
    if (f.payload.size() != nw * 8) throw std::runtime_error("drelu: bad rerandomization size");
    for (size_t i = 0; i < nw; ++i) {
      uint64_t v = 0;
      for (int k = 7; k >= 0; --k) v = (v << 8) | f.payload[8 * i + k];
      h[i] ^= v;
    }
  }

  std::vector<uint8_t> out(n);
  for (size_t j = 0; j < n; ++j) out[j] = static_cast<uint8_t>(get_bit(h, j));
  return out;
}

}  // namespace qj
