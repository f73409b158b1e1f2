#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <functional>
#include <thread>

#include "oracles.hpp"
#include "qj/mpc.hpp"

using namespace qj;

namespace {

const Category kCat{Phase::online, CostAttr::common_drelu};

// Runs a client function and a server function over an in-process pair.
// doctest assertions are not thread-safe, so workers only record results;
// all CHECKs happen on the main thread after join.
void run_two_party(const std::function<void(Link&)>& client_fn,
                   const std::function<void(Link&)>& server_fn, Transcript* client_t = nullptr) {
  auto [c_ch, s_ch] = make_inproc_pair();
  std::exception_ptr c_err, s_err;
  std::thread server([&] {
    try {
      Link l(*s_ch, Dir::s2c);
      server_fn(l);
    } catch (...) {
      s_err = std::current_exception();
    }
    s_ch.reset();  // unblocks the client if the server bailed early
  });
  try {
    Link l(*c_ch, Dir::c2s, client_t);
    client_fn(l);
  } catch (...) {
    c_err = std::current_exception();
  }
  c_ch.reset();
  server.join();
  if (c_err) std::rethrow_exception(c_err);
  if (s_err) std::rethrow_exception(s_err);
}

// Both parties run drelu_gmw over dealer triples; returns (client bits,
// server bits, client AND-words).
struct DreluRun {
  std::vector<uint8_t> h0, h1;
  uint64_t and_words0 = 0, and_words1 = 0;
};

DreluRun run_drelu_dealer(const Modulus& mod, const std::vector<uint64_t>& s0,
                          const std::vector<uint64_t>& s1, uint64_t seed) {
  DreluRun out;
  run_two_party(
      [&](Link& l) {
        DealerTripleSource triples(seed, 0);
        GmwContext ctx(l, triples, 0, kCat);
        SeededRng rng(derive_seed(seed, 100));
        out.h0 = drelu_gmw(ctx, mod, s0, rng);
        out.and_words0 = ctx.stats().and_words;
      },
      [&](Link& l) {
        DealerTripleSource triples(seed, 1);
        GmwContext ctx(l, triples, 1, kCat);
        SeededRng rng(derive_seed(seed, 101));
        out.h1 = drelu_gmw(ctx, mod, s1, rng);
        out.and_words1 = ctx.stats().and_words;
      });
  return out;
}

}  // namespace

TEST_CASE("additive share / reconstruct round-trip") {
  const Modulus mod(33832961);
  SeededRng rng(derive_seed(7, 1));
  std::vector<uint64_t> x(100), s0(100), s1(100), back(100);
  rng.fill_below(x, mod.p);
  share_vec(rng, mod, x, s0, s1);
  reconstruct_vec(mod, s0, s1, back);
  CHECK(back == x);
  bool shares_differ_from_value = false;
  for (size_t i = 0; i < x.size(); ++i) shares_differ_from_value |= (s0[i] != x[i]);
  CHECK(shares_differ_from_value);
  CHECK_THROWS_AS(share_vec(rng, mod, x, s0, std::span<uint64_t>(s1.data(), 5)),
                  std::invalid_argument);
}

TEST_CASE("word-packed bit helpers") {
  std::vector<uint64_t> words(2, 0);
  set_bit(words, 0, true);
  set_bit(words, 63, true);
  set_bit(words, 64, true);
  CHECK(get_bit(words, 0));
  CHECK(get_bit(words, 63));
  CHECK(get_bit(words, 64));
  CHECK_FALSE(get_bit(words, 1));
  set_bit(words, 63, false);
  CHECK_FALSE(get_bit(words, 63));
  CHECK(bit_words(0) == 0);
  CHECK(bit_words(1) == 1);
  CHECK(bit_words(64) == 1);
  CHECK(bit_words(65) == 2);
}

TEST_CASE("dealer triple stream satisfies the Beaver relation across chunks") {
  DealerTripleSource t0(42, 0), t1(42, 1);
  // Odd-sized requests that straddle the internal chunk boundary.
  for (size_t req : {7ull, 4093ull, 64ull, 5000ull}) {
    std::vector<uint64_t> a0(req), b0(req), c0(req), a1(req), b1(req), c1(req);
    t0.next(req, a0.data(), b0.data(), c0.data());
    t1.next(req, a1.data(), b1.data(), c1.data());
    for (size_t i = 0; i < req; ++i) {
      REQUIRE(((a0[i] ^ a1[i]) & (b0[i] ^ b1[i])) == (c0[i] ^ c1[i]));
    }
  }
  CHECK(t0.words_consumed() == 7 + 4093 + 64 + 5000);
  CHECK(t1.words_consumed() == t0.words_consumed());

  // Different dealer seeds give different streams.
  DealerTripleSource u0(43, 0);
  std::vector<uint64_t> a(4), b(4), c(4), a2(4), b2(4), c2(4);
  DealerTripleSource v0(42, 0);
  u0.next(4, a.data(), b.data(), c.data());
  v0.next(4, a2.data(), b2.data(), c2.data());
  CHECK(a != a2);
}

TEST_CASE("base oblivious transfer delivers exactly the chosen message") {
  const size_t n = 128;
  SeededRng rng(derive_seed(11, 0));
  std::vector<uint8_t> m0(n), m1(n), choice(n);
  for (auto& v : m0) v = static_cast<uint8_t>(rng.bit());
  for (auto& v : m1) v = static_cast<uint8_t>(rng.bit());
  for (auto& v : choice) v = static_cast<uint8_t>(rng.bit());

  std::vector<uint8_t> got;
  run_two_party(
      [&](Link& l) {
        SeededRng r(derive_seed(11, 1));
        got = ot_recv_bits(l, choice, kCat, r);
      },
      [&](Link& l) {
        SeededRng r(derive_seed(11, 2));
        ot_send_bits(l, m0, m1, kCat, r);
      });
  REQUIRE(got.size() == n);
  size_t zeros_taken = 0;
  for (size_t i = 0; i < n; ++i) {
    CHECK(got[i] == (choice[i] ? m1[i] : m0[i]));
    zeros_taken += choice[i] == 0;
  }
  CHECK(zeros_taken > 10);  // both branches exercised
  CHECK(zeros_taken < n - 10);
}

TEST_CASE("ot-based triple source: relation holds, two transfers per bit") {
  std::vector<uint64_t> a0(3), b0(3), c0(3), a1(3), b1(3), c1(3);
  uint64_t ots0 = 0, ots1 = 0;
  run_two_party(
      [&](Link& l) {
        OtTripleSource src(l, 0, 77, kCat);
        src.prefill(3);
        src.next(3, a0.data(), b0.data(), c0.data());
        ots0 = src.ots_performed();
      },
      [&](Link& l) {
        OtTripleSource src(l, 1, 77, kCat);
        src.prefill(3);
        src.next(3, a1.data(), b1.data(), c1.data());
        ots1 = src.ots_performed();
      });
  for (size_t i = 0; i < 3; ++i) {
    REQUIRE(((a0[i] ^ a1[i]) & (b0[i] ^ b1[i])) == (c0[i] ^ c1[i]));
  }
  // 3 words = 192 triple bits; two cross terms = 2 OTs per bit.
  CHECK(ots0 == 2 * 192);
  CHECK(ots1 == 2 * 192);
}

TEST_CASE("gmw and-layer computes shared AND over both triple modes") {
  SeededRng rng(derive_seed(5, 5));
  const size_t len = 6;
  std::vector<uint64_t> x(len), y(len), x0(len), x1(len), y0(len), y1(len);
  for (size_t i = 0; i < len; ++i) {
    x[i] = rng.u64();
    y[i] = rng.u64();
    x0[i] = rng.u64();
    x1[i] = x[i] ^ x0[i];
    y0[i] = rng.u64();
    y1[i] = y[i] ^ y0[i];
  }

  for (const bool use_ot : {false, true}) {
    std::vector<uint64_t> z0(len), z1(len);
    run_two_party(
        [&](Link& l) {
          std::unique_ptr<TripleSource> src;
          if (use_ot)
            src = std::make_unique<OtTripleSource>(l, 0, 31, kCat);
          else
            src = std::make_unique<DealerTripleSource>(31, 0);
          GmwContext ctx(l, *src, 0, kCat);
          ctx.and_layer(x0, y0, z0);
        },
        [&](Link& l) {
          std::unique_ptr<TripleSource> src;
          if (use_ot)
            src = std::make_unique<OtTripleSource>(l, 1, 31, kCat);
          else
            src = std::make_unique<DealerTripleSource>(31, 1);
          GmwContext ctx(l, *src, 1, kCat);
          ctx.and_layer(x1, y1, z1);
        });
    for (size_t i = 0; i < len; ++i) CHECK((z0[i] ^ z1[i]) == (x[i] & y[i]));
  }
}

TEST_CASE("drelu gate-count formula") {
  CHECK(drelu_and_gates(Modulus(257)) == 46);        // w = 9
  CHECK(drelu_and_gates(Modulus(33832961)) == 131);  // w = 26
  CHECK(drelu_and_gates(Modulus(5)) == 16);          // w = 3
  CHECK(drelu_triple_words(Modulus(257), 257) == 46 * 5);
}

TEST_CASE("drelu: exhaustive over Z_257 with random shares") {
  const Modulus mod(257);
  const size_t n = 257;
  std::vector<uint64_t> x(n), s0(n), s1(n);
  for (size_t j = 0; j < n; ++j) x[j] = j;
  SeededRng rng(derive_seed(21, 0));
  share_vec(rng, mod, x, s0, s1);

  const auto run = run_drelu_dealer(mod, s0, s1, 21);
  REQUIRE(run.h0.size() == n);
  REQUIRE(run.h1.size() == n);
  for (size_t j = 0; j < n; ++j) {
    REQUIRE((run.h0[j] ^ run.h1[j]) == drelu_scalar(x[j], mod));
    REQUIRE((run.h0[j] ^ run.h1[j]) == oracle::drelu_naive(x[j], mod.p));
  }
  // Triple consumption matches the 5w+1 formula exactly.
  CHECK(run.and_words0 == drelu_triple_words(mod, n));
  CHECK(run.and_words1 == drelu_triple_words(mod, n));
  // drelu(0) = 0 is part of the sweep, but pin it explicitly.
  CHECK((run.h0[0] ^ run.h1[0]) == 0);
  CHECK((run.h0[128] ^ run.h1[128]) == 1);  // largest positive
  CHECK((run.h0[129] ^ run.h1[129]) == 0);  // most negative
}

TEST_CASE("drelu: all value/share splits at a tiny modulus") {
  const Modulus mod(5);
  std::vector<uint64_t> x, s0, s1;
  for (uint64_t v = 0; v < 5; ++v)
    for (uint64_t a = 0; a < 5; ++a) {
      x.push_back(v);
      s0.push_back(a);
      s1.push_back(mod.sub(v, a));
    }
  const auto run = run_drelu_dealer(mod, s0, s1, 33);
  for (size_t j = 0; j < x.size(); ++j) {
    REQUIRE((run.h0[j] ^ run.h1[j]) == drelu_scalar(x[j], mod));
  }
  CHECK(run.and_words0 == drelu_triple_words(mod, x.size()));
}

TEST_CASE("drelu: random batch at the default 26-bit prime") {
  const Modulus mod(33832961);
  const size_t n = 10000;
  std::vector<uint64_t> x(n), s0(n), s1(n);
  SeededRng rng(derive_seed(22, 0));
  rng.fill_below(x, mod.p);
  x[0] = 0;
  x[1] = (mod.p - 1) / 2;      // largest positive
  x[2] = (mod.p - 1) / 2 + 1;  // most negative
  x[3] = mod.p - 1;            // -1
  share_vec(rng, mod, x, s0, s1);

  const auto run = run_drelu_dealer(mod, s0, s1, 22);
  size_t ones = 0;
  for (size_t j = 0; j < n; ++j) {
    REQUIRE((run.h0[j] ^ run.h1[j]) == drelu_scalar(x[j], mod));
    ones += run.h0[j] ^ run.h1[j];
  }
  CHECK((run.h0[0] ^ run.h1[0]) == 0);
  CHECK((run.h0[1] ^ run.h1[1]) == 1);
  CHECK((run.h0[2] ^ run.h1[2]) == 0);
  CHECK((run.h0[3] ^ run.h1[3]) == 0);
  CHECK(ones > n / 3);
  CHECK(ones < 2 * n / 3);
  CHECK(run.and_words0 == drelu_triple_words(mod, n));
}

TEST_CASE("drelu: ot-generated triples give the same answers") {
  const Modulus mod(257);
  const size_t n = 50;
  std::vector<uint64_t> x(n), s0(n), s1(n);
  SeededRng rng(derive_seed(23, 0));
  rng.fill_below(x, mod.p);
  x[0] = 0;
  share_vec(rng, mod, x, s0, s1);

  std::vector<uint8_t> h0, h1;
  run_two_party(
      [&](Link& l) {
        OtTripleSource triples(l, 0, 23, kCat);
        triples.prefill(drelu_triple_words(mod, n));
        GmwContext ctx(l, triples, 0, kCat);
        SeededRng r(derive_seed(23, 100));
        h0 = drelu_gmw(ctx, mod, s0, r);
      },
      [&](Link& l) {
        OtTripleSource triples(l, 1, 23, kCat);
        triples.prefill(drelu_triple_words(mod, n));
        GmwContext ctx(l, triples, 1, kCat);
        SeededRng r(derive_seed(23, 101));
        h1 = drelu_gmw(ctx, mod, s1, r);
      });
  for (size_t j = 0; j < n; ++j) {
    REQUIRE((h0[j] ^ h1[j]) == drelu_scalar(x[j], mod));
  }
}

TEST_CASE("drelu: client share is re-randomized, transcript category is uniform") {
  const Modulus mod(257);
  const size_t n = 64;
  std::vector<uint64_t> x(n), s0(n), s1(n);
  SeededRng rng(derive_seed(29, 0));
  rng.fill_below(x, mod.p);
  share_vec(rng, mod, x, s0, s1);

  Transcript t;
  std::vector<uint8_t> h0, h1;
  run_two_party(
      [&](Link& l) {
        DealerTripleSource triples(29, 0);
        GmwContext ctx(l, triples, 0, kCat);
        SeededRng r(derive_seed(29, 100));
        h0 = drelu_gmw(ctx, mod, s0, r);
      },
      [&](Link& l) {
        DealerTripleSource triples(29, 1);
        GmwContext ctx(l, triples, 1, kCat);
        SeededRng r(derive_seed(29, 101));
        h1 = drelu_gmw(ctx, mod, s1, r);
      },
      &t);
  for (size_t j = 0; j < n; ++j) REQUIRE((h0[j] ^ h1[j]) == drelu_scalar(x[j], mod));

  for (const auto& f : t.frames()) {
    CHECK(f.type == FrameType::drelu);
    CHECK(f.cat.attr == CostAttr::common_drelu);
    CHECK(f.cat.phase == Phase::online);
  }
  // Every AND layer is one c2s + one s2c exchange, plus the final
  // re-randomization message: frame count is 2*layers + 1.
  const uint64_t layers = 3 * 9 + 3 + 4;  // w + (w+1) + 1 + w + ceil(log2 9) + 1
  CHECK(t.frames().size() == 2 * layers + 1);
}
