#include "qj/protocol.hpp"

#include <algorithm>
#include <cassert>
#include <cstring>
#include <exception>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>

#include "qj/mpc.hpp"
#include "qj/rng.hpp"

namespace qj {

namespace {

// Seed-derivation labels: every secret is pinned to (root seed, layer, label,
// indices...), so the session seed fully determines both parties' tapes and
// transcripts replay bit-exactly.
constexpr uint64_t kLabR0 = 0xC0;         // client: pooled offline mask, (L, lab, q)
constexpr uint64_t kLabR0Prior = 0xC1;    // client: urgent offline mask, (L, lab, j)
constexpr uint64_t kLabR0Fill = 0xC2;     // client: unused-tail mask fill, (L, lab, b)
constexpr uint64_t kLabX0Fill = 0xC3;     // client: unused-tail share fill, (L, lab, b)
constexpr uint64_t kLabMask = 0x51;       // server: result mask, (L, lab, entry, j)
constexpr uint64_t kLabXdot = 0x52;       // server: next-layer share, (L, lab, q)
constexpr uint64_t kLabXdotPrior = 0x53;  // server: next-layer urgent share, (L, lab, j)
constexpr uint64_t kLabH1 = 0x54;         // server: pre-drawn sign share, (L, lab, unit)
constexpr uint64_t kLabX1Fill = 0x55;     // server: unused-tail share fill, (L, lab, b)
constexpr uint64_t kLabDealer = 0x77;     // both: dealer triple stream
constexpr uint64_t kLabOt = 0x78;         // per party: base-OT scalars and pads
constexpr uint64_t kLabDreluRng = 0x79;   // per party: sign-protocol re-randomization

constexpr int kClient = 0;
constexpr int kServer = 1;

struct Dims {
  uint32_t C = 0, H = 0, W = 0;
  uint64_t len() const { return static_cast<uint64_t>(C) * H * W; }
};

std::vector<uint8_t> pack_residues(std::span<const uint64_t> v) {
  std::vector<uint8_t> out(v.size() * 8);
  for (size_t i = 0; i < v.size(); ++i)
    for (int b = 0; b < 8; ++b) out[i * 8 + b] = static_cast<uint8_t>(v[i] >> (8 * b));
  return out;
}

std::vector<uint64_t> unpack_residues(std::span<const uint8_t> bytes, size_t expect, uint64_t p) {
  if (bytes.size() != expect * 8)
    throw std::runtime_error("protocol error: share frame has the wrong length");
  std::vector<uint64_t> out(expect);
  for (size_t i = 0; i < expect; ++i) {
    uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= static_cast<uint64_t>(bytes[i * 8 + b]) << (8 * b);
    if (v >= p) throw std::runtime_error("protocol error: share residue out of range");
    out[i] = v;
  }
  return out;
}

std::vector<uint64_t> draw_residues(uint64_t seed, size_t n, uint64_t p) {
  SeededRng rng(seed);
  std::vector<uint64_t> v(n);
  rng.fill_below(v, p);
  return v;
}

RingTensor3 to_tensor(std::span<const uint64_t> flat, const Dims& d) {
  RingTensor3 t(d.C, d.H, d.W);
  assert(flat.size() == t.data.size());
  std::copy(flat.begin(), flat.end(), t.data.begin());
  return t;
}

uint64_t fold_vec(std::span<const uint64_t> v) {
  uint64_t h = 0x9ae16a3b2f90404fULL;
  for (uint64_t x : v) h = splitmix64(h ^ x);
  return h;
}

// One online processing unit: an in-queue input, or (when the activation
// vector fills its ciphertexts exactly and leaves no idle tail) a dedicated
// run for one urgent input.
struct OnlineUnit {
  CostAttr attr = CostAttr::inqueue;
  uint32_t idx = 0;  // batch position b, or urgent position j
};

// A tail slot range of an in-queue input's last ciphertext, in extended
// element coordinates [len, len + s_hat).
struct TailPiece {
  SlotRole role = SlotRole::unused;
  uint32_t owner = 0;  // urgent input index (role == prior)
  uint64_t ext_lo = 0, ext_hi = 0;
  uint64_t src_lo = 0, src_hi = 0;  // flat range within the urgent vector
};

// Everything both parties derive, identically and without communication,
// about one convolution block.
struct ConvBlock {
  OnlinePlan op;
  OfflinePlan fp;
  uint64_t len_in = 0, len_out = 0, ext_len = 0;
  uint64_t HoWo = 0, rows = 0;
  bool online_rec = false, offline_rec = false;       // urgent data rides idle slots
  bool online_ded = false, offline_ded = false;       // no idle slots: dedicated runs
  uint32_t entries = 0;                               // offline result entries (pool + dedicated)
  std::vector<OnlineUnit> units;
  std::vector<std::vector<TailPiece>> tails;          // per in-queue input
  ChainLayout off_layout;                             // only when offline_rec
  uint64_t chunks_needed = 0, chunks_done = 0;        // offline urgent coverage
};

ConvBlock make_conv_block(const LayerSpec& spec, [[maybe_unused]] const Dims& dims,
                          const SlotParams& params, uint32_t B, uint32_t Q, uint32_t P) {
  assert(spec.kind == LayerSpec::Kind::conv);
  assert(dims.C == spec.shape.Ci && dims.H == spec.shape.Hi && dims.W == spec.shape.Wi);
  ConvBlock cb;
  cb.op = plan_online(spec.shape, params);
  cb.fp = plan_offline(spec.shape, params);
  if (cb.fp.wide_row)
    throw std::invalid_argument(
        "run_session: convolution output row exceeds the ciphertext slot count "
        "(wide-row geometry is plan-only)");
  cb.len_in = cb.op.len;
  cb.ext_len = cb.op.len + cb.op.s_hat;
  cb.HoWo = cb.fp.out_positions;
  cb.rows = cb.fp.rows;
  cb.len_out = static_cast<uint64_t>(spec.shape.Co) * cb.HoWo;

  cb.online_rec = P > 0 && cb.op.recycling();
  cb.online_ded = P > 0 && !cb.op.recycling();
  cb.offline_rec = P > 0 && cb.fp.recycling();
  cb.offline_ded = P > 0 && !cb.fp.recycling();
  cb.entries = Q + (cb.offline_ded ? P : 0);

  for (uint32_t b = 0; b < B; ++b) cb.units.push_back({CostAttr::inqueue, b});
  if (cb.online_ded) {
    assert(cb.op.s_hat == 0 && cb.len_in % params.N == 0);
    for (uint32_t j = 0; j < P; ++j) cb.units.push_back({CostAttr::prior, j});
  }

  cb.tails.assign(B, {});
  const uint64_t N = params.N;
  if (cb.online_rec) {
    ChainLayout lay = build_chain_layout(cb.op, B, P);  // throws if tails cannot carry P
    for (const auto& a : lay.assigns) {
      if (a.role == SlotRole::inqueue) continue;
      const uint32_t b = a.ct / cb.op.cts_per_input;
      const uint64_t i = a.ct % cb.op.cts_per_input;
      cb.tails[b].push_back({a.role, a.owner, i * N + a.slot_lo, i * N + a.slot_hi,
                             a.src_lo, a.src_hi});
    }
  } else if (cb.op.s_hat != 0) {
    for (uint32_t b = 0; b < B; ++b)
      cb.tails[b].push_back({SlotRole::unused, 0, cb.len_in, cb.ext_len, 0, 0});
  }

  if (cb.offline_rec) {
    cb.off_layout = build_chain_layout(cb.fp, Q, P, /*allow_partial=*/true);
    cb.chunks_needed = cb.fp.per_prior_batch;
    const uint64_t worst_lo = static_cast<uint64_t>(P - 1) * cb.fp.per_prior_batch;
    cb.chunks_done = Q > worst_lo ? std::min<uint64_t>(cb.fp.per_prior_batch, Q - worst_lo) : 0;
  }
  return cb;
}

// Per (result entry, ciphertext) slot assignments of the offline pass.
// Entries [0, Q) are pooled inputs (tails may carry urgent rows); entries
// [Q, Q+P) are dedicated urgent entries (own rows = the urgent matrix).
std::vector<std::vector<std::vector<SlotAssign>>> offline_ct_map(const ConvBlock& cb, uint32_t Q) {
  std::vector<std::vector<std::vector<SlotAssign>>> map(
      cb.entries, std::vector<std::vector<SlotAssign>>(cb.fp.n));
  auto synthesize = [&](uint32_t e) {
    for (uint64_t i = 0; i < cb.fp.n; ++i) {
      const uint64_t own_rows =
          std::min(cb.fp.rows_per_ct, cb.rows - std::min(cb.rows, i * cb.fp.rows_per_ct));
      for (uint64_t m = 0; m < own_rows; ++m) {
        SlotAssign a;
        a.role = SlotRole::inqueue;
        a.owner = e;
        a.slot_lo = m * cb.HoWo;
        a.slot_hi = (m + 1) * cb.HoWo;
        a.src_row = static_cast<uint32_t>(i * cb.fp.rows_per_ct + m);
        a.src_lo = 0;
        a.src_hi = cb.HoWo;
        map[e][i].push_back(a);
      }
    }
  };
  if (cb.offline_rec) {
    for (const auto& a : cb.off_layout.assigns) {
      if (a.role == SlotRole::unused) continue;
      map[a.ct / cb.fp.n][a.ct % cb.fp.n].push_back(a);
    }
  } else {
    for (uint32_t e = 0; e < Q; ++e) synthesize(e);
  }
  for (uint32_t e = Q; e < cb.entries; ++e) synthesize(e);
  return map;
}

// Extended activation vector of one online unit: the unit's own elements in
// [0, len), urgent fragments and seeded uniform fill in the tail.
std::vector<uint64_t> build_ext(const ConvBlock& cb, const OnlineUnit& un,
                                std::span<const uint64_t> head,
                                const std::vector<std::vector<uint64_t>>& priors,
                                uint64_t fill_seed, const Modulus& mod) {
  if (un.attr == CostAttr::prior) return {head.begin(), head.end()};
  std::vector<uint64_t> ext(cb.ext_len);
  assert(head.size() == cb.len_in);
  std::copy(head.begin(), head.end(), ext.begin());
  SeededRng fill(fill_seed);
  for (const auto& tp : cb.tails[un.idx]) {
    if (tp.role == SlotRole::prior) {
      assert(tp.ext_hi - tp.ext_lo == tp.src_hi - tp.src_lo);
      const auto& src = priors[tp.owner];
      for (uint64_t c = 0; c < tp.ext_hi - tp.ext_lo; ++c) ext[tp.ext_lo + c] = src[tp.src_lo + c];
    } else {
      for (uint64_t pos = tp.ext_lo; pos < tp.ext_hi; ++pos) ext[pos] = fill.below(mod.p);
    }
  }
  return ext;
}

uint64_t total_ext_elems(const ConvBlock& cb) {
  uint64_t t = 0;
  for (const auto& un : cb.units) t += un.attr == CostAttr::inqueue ? cb.ext_len : cb.len_in;
  return t;
}

// Folds the own-row head of one result ciphertext into the receiver's output
// accumulator: w[j*HoWo + pos] += sum_m values[m*HoWo + pos].  The same sum
// applies to the client's decrypted slots and to the server's mask.
void head_accumulate(std::vector<uint64_t>& w, uint32_t j, std::span<const uint64_t> values,
                     const ConvBlock& cb, const Modulus& mod) {
  for (uint64_t m = 0; m < cb.fp.rows_per_ct; ++m)
    for (uint64_t pos = 0; pos < cb.HoWo; ++pos)
      w[j * cb.HoWo + pos] = mod.add(w[j * cb.HoWo + pos], values[m * cb.HoWo + pos]);
}

// Folds the recycled tail of pooled entry e's result ciphertext j into the
// served urgent input's accumulator (column chunk [col_lo, col_hi)).
void tail_accumulate(std::vector<std::vector<uint64_t>>& tgt, uint32_t e, uint32_t j,
                     std::span<const uint64_t> values, const ConvBlock& cb, uint32_t P,
                     const Modulus& mod) {
  const uint64_t ppb = cb.fp.per_prior_batch;
  const uint64_t serve = e / ppb;
  if (serve >= P) return;
  const uint64_t qq = e % ppb;
  const uint64_t cc = qq / cb.fp.rows_group;
  const uint64_t col_lo = cc * cb.fp.s_tilde;
  const uint64_t col_hi = std::min(col_lo + cb.fp.s_tilde, cb.HoWo);
  if (col_hi <= col_lo) return;
  const uint64_t tail0 = values.size() - cb.fp.s_tilde;
  auto& w = tgt[serve];
  for (uint64_t c = 0; c < col_hi - col_lo; ++c)
    w[j * cb.HoWo + col_lo + c] = mod.add(w[j * cb.HoWo + col_lo + c], values[tail0 + c]);
}

struct ServerCapture {
  std::vector<uint64_t> t, y;
};

// Executes one party of the session.  Both parties run the same code with
// `party_` branches, which keeps the message order visibly lockstep.
class PartyRunner {
 public:
  PartyRunner(int party, const SessionConfig& cfg, const std::vector<LayerSpec>& model,
              HeBackend& he, CostMeter& meter, Link& link, KeyHandle key_c, KeyHandle key_s)
      : party_(party),
        cfg_(cfg),
        model_(model),
        he_(he),
        meter_(meter),
        link_(link),
        key_c_(key_c),
        key_s_(key_s),
        mod_(he.modulus()),
        N_(he.slot_count()),
        B_(cfg.n_inqueue),
        Q_(cfg.n_offline_pool ? cfg.n_offline_pool : cfg.n_inqueue),
        P_(cfg.n_priors) {
    plain_convs.assign(model.size(), {0, 0});
    if (cfg.drelu_mode == DreluMode::dealer) {
      triples_ = std::make_unique<DealerTripleSource>(derive_seed(cfg.seed, kLabDealer), party);
    } else {
      triples_ = std::make_unique<OtTripleSource>(
          link, party, derive_seed(cfg.seed, kLabOt, static_cast<uint64_t>(party)),
          Category{Phase::offline, CostAttr::common_drelu});
    }
    gmw_ = std::make_unique<GmwContext>(link, *triples_, party,
                                        Category{Phase::online, CostAttr::common_drelu});
  }

  void run(std::vector<std::vector<uint64_t>>& xq, std::vector<std::vector<uint64_t>>& xp) {
    Dims dims{model_[0].shape.Ci, model_[0].shape.Hi, model_[0].shape.Wi};
    for (uint32_t L = 0; L < model_.size(); ++L) {
      const LayerSpec& spec = model_[L];
      switch (spec.kind) {
        case LayerSpec::Kind::conv: {
          conv_block(L, spec, dims, xq, xp);
          const OutDims od = out_dims(spec.shape);
          dims = {spec.shape.Co, od.Ho, od.Wo};
          break;
        }
        case LayerSpec::Kind::meanpool_sum: {
          for (auto& v : xq) v = pool_share(v, dims, spec.pool_win);
          for (auto& v : xp) v = pool_share(v, dims, spec.pool_win);
          dims = {dims.C, dims.H / spec.pool_win, dims.W / spec.pool_win};
          BlockReport rep;
          rep.layer = L;
          rep.kind = spec.kind;
          reports.push_back(rep);
          break;
        }
        case LayerSpec::Kind::batchnorm: {
          for (auto& v : xq) bn_share(v, dims, spec);
          for (auto& v : xp) bn_share(v, dims, spec);
          BlockReport rep;
          rep.layer = L;
          rep.kind = spec.kind;
          reports.push_back(rep);
          break;
        }
      }
    }
  }

  std::vector<BlockReport> reports;
  ServerCapture capture;
  std::vector<std::pair<uint64_t, uint64_t>> plain_convs;  // per layer: (inqueue, urgent)

  uint64_t triple_words() const { return triples_->words_consumed(); }
  uint64_t base_ots() const {
    auto* ot = dynamic_cast<const OtTripleSource*>(triples_.get());
    return ot ? ot->ots_performed() : 0;
  }

 private:
  bool client() const { return party_ == kClient; }

  // Non-overlapping win x win window sums (both parties apply them locally).
  std::vector<uint64_t> pool_share(const std::vector<uint64_t>& v, const Dims& d, uint32_t win) {
    assert(d.H % win == 0 && d.W % win == 0);
    const uint32_t Ho = d.H / win, Wo = d.W / win;
    std::vector<uint64_t> out(static_cast<size_t>(d.C) * Ho * Wo);
    for (uint32_t c = 0; c < d.C; ++c)
      for (uint32_t oh = 0; oh < Ho; ++oh)
        for (uint32_t ow = 0; ow < Wo; ++ow) {
          uint64_t acc = 0;
          for (uint32_t dh = 0; dh < win; ++dh)
            for (uint32_t dw = 0; dw < win; ++dw)
              acc = mod_.add(
                  acc, v[(static_cast<size_t>(c) * d.H + oh * win + dh) * d.W + ow * win + dw]);
          out[(static_cast<size_t>(c) * Ho + oh) * Wo + ow] = acc;
        }
    return out;
  }

  // Public per-channel affine: the scale hits both shares, the shift only
  // the server share (so the reconstruction gains it exactly once).
  void bn_share(std::vector<uint64_t>& v, const Dims& d, const LayerSpec& spec) {
    const size_t hw = static_cast<size_t>(d.H) * d.W;
    for (uint32_t c = 0; c < d.C; ++c)
      for (size_t i = 0; i < hw; ++i) {
        uint64_t& x = v[c * hw + i];
        x = mod_.mul(x, spec.bn_scale[c]);
        if (!client()) x = mod_.add(x, spec.bn_shift[c]);
      }
  }

  void conv_block(uint32_t L, const LayerSpec& spec, const Dims& dims,
                  std::vector<std::vector<uint64_t>>& xq, std::vector<std::vector<uint64_t>>& xp);

  const int party_;
  const SessionConfig& cfg_;
  const std::vector<LayerSpec>& model_;
  HeBackend& he_;
  CostMeter& meter_;
  Link& link_;
  const KeyHandle key_c_, key_s_;
  const Modulus& mod_;
  const uint32_t N_;
  const uint32_t B_, Q_, P_;
  std::unique_ptr<TripleSource> triples_;
  std::unique_ptr<GmwContext> gmw_;
};

void PartyRunner::conv_block(uint32_t L, const LayerSpec& spec, const Dims& dims,
                             std::vector<std::vector<uint64_t>>& xq,
                             std::vector<std::vector<uint64_t>>& xp) {
  const ConvBlock cb = make_conv_block(spec, dims, cfg_.slots, B_, Q_, P_);
  const uint64_t p = mod_.p;
  const uint64_t seed = cfg_.seed;
  const bool relu = spec.act == ActKind::relu;

  BlockReport rep;
  rep.layer = L;
  rep.kind = spec.kind;
  rep.relu = relu;
  rep.online_recycling = cb.online_rec;
  rep.offline_recycling = cb.offline_rec;
  rep.online_dedicated_prior = cb.online_ded;
  rep.offline_dedicated_prior = cb.offline_ded;
  rep.prior_chunks_needed = cb.chunks_needed;
  rep.prior_chunks_done = cb.chunks_done;
  rep.separate_prior_frames = (!cfg_.merge_final_share && P_ > 0) ? P_ : 0;

  const auto ct_map = offline_ct_map(cb, Q_);

  // Client-side mask material.
  std::vector<std::vector<uint64_t>> r0q, r0p;
  std::vector<RingMatrix> prior_mats;
  RingMatrix kflat;
  if (client()) {
    r0q.resize(Q_);
    for (uint32_t q = 0; q < Q_; ++q)
      r0q[q] = draw_residues(derive_seed(seed, L, kLabR0, q), cb.len_in, p);
    r0p.resize(P_);
    prior_mats.reserve(P_);
    for (uint32_t j = 0; j < P_; ++j) {
      r0p[j] = draw_residues(derive_seed(seed, L, kLabR0Prior, j), cb.len_in, p);
      prior_mats.push_back(im2col(to_tensor(r0p[j], dims), spec.shape, mod_));
    }
  } else {
    kflat = flatten_kernel(spec.kernel);
  }

  // Result-share accumulators: client w = r0*k - mask sums; server xdd = mask
  // sums (the second summand of its next-layer share).
  std::vector<std::vector<uint64_t>> w_q, w_p;    // client
  std::vector<std::vector<uint64_t>> xdd_q, xdd_p;  // server
  if (client()) {
    w_q.assign(Q_, std::vector<uint64_t>(cb.len_out, 0));
    w_p.assign(P_, std::vector<uint64_t>(cb.len_out, 0));
  } else {
    xdd_q.assign(Q_, std::vector<uint64_t>(cb.len_out, 0));
    xdd_p.assign(P_, std::vector<uint64_t>(cb.len_out, 0));
  }

  // ---------------------------------------------------------------- offline
  // Pooled mask pass: per result entry, the client sends n packed mask
  // ciphertexts; the server folds the kernel (n cmult, n-1 ct adds, one
  // masked plain add per output channel) and returns Co result ciphertexts.
  std::vector<uint64_t> slots(N_);
  for (uint32_t e = 0; e < cb.entries; ++e) {
    const Category cat{Phase::offline, e < Q_ ? CostAttr::inqueue : CostAttr::prior};
    if (client()) {
      const RingMatrix own_mat =
          e < Q_ ? im2col(to_tensor(r0q[e], dims), spec.shape, mod_) : RingMatrix{};
      const RingMatrix& mat = e < Q_ ? own_mat : prior_mats[e - Q_];
      for (uint64_t i = 0; i < cb.fp.n; ++i) {
        std::fill(slots.begin(), slots.end(), 0);
        for (const auto& a : ct_map[e][i]) {
          const RingMatrix& src = a.role == SlotRole::prior ? prior_mats[a.owner] : mat;
          for (uint64_t c = 0; c < a.slot_hi - a.slot_lo; ++c)
            slots[a.slot_lo + c] = src.at(a.src_row, static_cast<uint32_t>(a.src_lo + c));
        }
        const CipherVec ct = he_.encrypt(key_c_, PlainVec{slots}, meter_, cat);
        link_.send(FrameType::ct, he_.serialize(ct), cat);
      }
      for (uint32_t j = 0; j < spec.shape.Co; ++j) {
        const Frame f = link_.recv(FrameType::ct, cat);
        const PlainVec pt = he_.decrypt(key_c_, he_.deserialize(f.payload), meter_, cat);
        auto& w = e < Q_ ? w_q[e] : w_p[e - Q_];
        head_accumulate(w, j, pt.slots, cb, mod_);
        if (e < Q_ && cb.offline_rec) tail_accumulate(w_p, e, j, pt.slots, cb, P_, mod_);
      }
    } else {
      std::vector<CipherVec> cts;
      cts.reserve(cb.fp.n);
      for (uint64_t i = 0; i < cb.fp.n; ++i)
        cts.push_back(he_.deserialize(link_.recv(FrameType::ct, cat).payload));
      for (uint32_t j = 0; j < spec.shape.Co; ++j) {
        std::optional<CipherVec> acc;
        for (uint64_t i = 0; i < cb.fp.n; ++i) {
          std::fill(slots.begin(), slots.end(), 0);
          for (const auto& a : ct_map[e][i])
            std::fill(slots.begin() + a.slot_lo, slots.begin() + a.slot_hi,
                      kflat.at(j, a.src_row));
          CipherVec term = he_.cmult(PlainVec{slots}, cts[i], meter_, cat);
          acc = acc ? he_.add_ct(*acc, term, meter_, cat) : std::move(term);
        }
        const std::vector<uint64_t> mask =
            draw_residues(derive_seed(seed, L, kLabMask, e, j), N_, p);
        PlainVec negm;
        negm.slots.resize(N_);
        for (uint32_t s = 0; s < N_; ++s) negm.slots[s] = mod_.neg(mask[s]);
        const CipherVec res = he_.add_plain(*acc, negm, meter_, cat);
        link_.send(FrameType::ct, he_.serialize(res), cat);
        auto& xdd = e < Q_ ? xdd_q[e] : xdd_p[e - Q_];
        head_accumulate(xdd, j, mask, cb, mod_);
        if (e < Q_ && cb.offline_rec) tail_accumulate(xdd_p, e, j, mask, cb, P_, mod_);
      }
    }
  }

  // Prepared activation ciphertexts (ReLU blocks): the server's sign share
  // h1 is pre-drawn fresh randomness and its input share is offline-known,
  // so [[h1]] and [[x1*(1-2*h1)]] are encrypted and sent before the online
  // phase starts.
  std::vector<std::vector<CipherVec>> prep_h1, prep_x1m;  // client: [unit][i]
  std::vector<std::vector<uint64_t>> srv_x1_ext, srv_h1_ext;  // server: [unit]
  const uint32_t cpi = cb.op.cts_per_input;
  if (relu) {
    for (size_t u = 0; u < cb.units.size(); ++u) {
      const OnlineUnit& un = cb.units[u];
      const Category cat{Phase::offline, un.attr};
      const uint64_t elen = un.attr == CostAttr::inqueue ? cb.ext_len : cb.len_in;
      if (client()) {
        std::vector<CipherVec> h1cts, x1mcts;
        for (uint32_t i = 0; i < cpi; ++i) {
          h1cts.push_back(he_.deserialize(link_.recv(FrameType::ct, cat).payload));
          x1mcts.push_back(he_.deserialize(link_.recv(FrameType::ct, cat).payload));
        }
        prep_h1.push_back(std::move(h1cts));
        prep_x1m.push_back(std::move(x1mcts));
      } else {
        const auto& head = un.attr == CostAttr::inqueue ? xq[un.idx] : xp[un.idx];
        std::vector<uint64_t> x1e =
            build_ext(cb, un, head, xp, derive_seed(seed, L, kLabX1Fill, un.idx), mod_);
        std::vector<uint64_t> h1e(elen);
        SeededRng hr(derive_seed(seed, L, kLabH1, static_cast<uint64_t>(u)));
        for (auto& b : h1e) b = hr.u64() & 1;
        for (uint32_t i = 0; i < cpi; ++i) {
          PlainVec h1s, x1ms;
          h1s.slots.assign(h1e.begin() + i * N_, h1e.begin() + (i + 1) * N_);
          x1ms.slots.resize(N_);
          for (uint32_t s = 0; s < N_; ++s) {
            const uint64_t e2 = static_cast<uint64_t>(i) * N_ + s;
            x1ms.slots[s] = h1e[e2] ? mod_.neg(x1e[e2]) : x1e[e2];
          }
          link_.send(FrameType::ct, he_.serialize(he_.encrypt(key_s_, h1s, meter_, cat)), cat);
          link_.send(FrameType::ct, he_.serialize(he_.encrypt(key_s_, x1ms, meter_, cat)), cat);
        }
        srv_x1_ext.push_back(std::move(x1e));
        srv_h1_ext.push_back(std::move(h1e));
      }
    }
    // Beaver material for the sign subprotocol is precomputation.
    triples_->prefill(drelu_triple_words(mod_, total_ext_elems(cb)));
  }

  // ----------------------------------------------------------------- online
  std::vector<std::vector<uint64_t>> y_share(B_), prior_share(P_);  // server
  std::vector<std::vector<uint64_t>> u_prior;                       // server
  if (!client()) u_prior.assign(P_, std::vector<uint64_t>(cb.len_in, 0));

  if (relu) {
    // Sign shares over the concatenated extended batch.
    std::vector<std::vector<uint64_t>> x0_ext, r0_ext;  // client
    std::vector<uint64_t> xcat;
    xcat.reserve(total_ext_elems(cb));
    if (client()) {
      for (const OnlineUnit& un : cb.units) {
        const auto& head = un.attr == CostAttr::inqueue ? xq[un.idx] : xp[un.idx];
        x0_ext.push_back(
            build_ext(cb, un, head, xp, derive_seed(seed, L, kLabX0Fill, un.idx), mod_));
        const auto& r0h = un.attr == CostAttr::inqueue ? r0q[un.idx] : r0p[un.idx];
        r0_ext.push_back(
            build_ext(cb, un, r0h, r0p, derive_seed(seed, L, kLabR0Fill, un.idx), mod_));
        xcat.insert(xcat.end(), x0_ext.back().begin(), x0_ext.back().end());
      }
    } else {
      for (size_t u = 0; u < cb.units.size(); ++u)
        xcat.insert(xcat.end(), srv_x1_ext[u].begin(), srv_x1_ext[u].end());
    }
    std::vector<uint64_t> fresh;  // server: its pre-drawn sign share, packed
    if (!client()) {
      fresh.assign(bit_words(xcat.size()), 0);
      size_t g = 0;
      for (const auto& h1e : srv_h1_ext)
        for (uint64_t b : h1e) {
          if (b) fresh[g / 64] |= uint64_t{1} << (g % 64);
          ++g;
        }
    }
    SeededRng drng(derive_seed(seed, L, kLabDreluRng, static_cast<uint64_t>(party_)));
    const std::vector<uint8_t> h = drelu_gmw(*gmw_, mod_, xcat, drng, fresh);
    assert(h.size() == xcat.size());

    if (client()) {
      // Two cmults and two additions per ciphertext on the server-key
      // prepared material; the result decrypts to t = relu(x) - r0 - x1*h1.
      size_t off = 0;
      PlainVec A, Bv, Cv;
      A.slots.resize(N_);
      Bv.slots.resize(N_);
      Cv.slots.resize(N_);
      for (size_t u = 0; u < cb.units.size(); ++u) {
        const OnlineUnit& un = cb.units[u];
        const Category cat{Phase::online, un.attr};
        const uint64_t elen = un.attr == CostAttr::inqueue ? cb.ext_len : cb.len_in;
        const auto& x0e = x0_ext[u];
        const auto& r0e = r0_ext[u];
        for (uint32_t i = 0; i < cpi; ++i) {
          for (uint32_t s = 0; s < N_; ++s) {
            const uint64_t e2 = static_cast<uint64_t>(i) * N_ + s;
            const uint8_t h0 = h[off + e2];
            A.slots[s] = h0 ? mod_.sub(x0e[e2], r0e[e2]) : mod_.neg(r0e[e2]);
            Bv.slots[s] = h0 ? mod_.neg(x0e[e2]) : x0e[e2];
            Cv.slots[s] = h0;
          }
          CipherVec t1 = he_.cmult(Bv, prep_h1[u][i], meter_, cat);
          CipherVec t2 = he_.cmult(Cv, prep_x1m[u][i], meter_, cat);
          CipherVec t = he_.add_plain(he_.add_ct(t1, t2, meter_, cat), A, meter_, cat);
          link_.send(FrameType::ct, he_.serialize(t), cat);
        }
        off += elen;
      }
    } else {
      // Decrypt, rebuild u = relu(x) - r0, convolve per input.
      for (size_t u = 0; u < cb.units.size(); ++u) {
        const OnlineUnit& un = cb.units[u];
        const Category cat{Phase::online, un.attr};
        const uint64_t elen = un.attr == CostAttr::inqueue ? cb.ext_len : cb.len_in;
        const auto& x1e = srv_x1_ext[u];
        const auto& h1e = srv_h1_ext[u];
        std::vector<uint64_t> u_ext(elen);
        for (uint32_t i = 0; i < cpi; ++i) {
          const Frame f = link_.recv(FrameType::ct, cat);
          const PlainVec pt = he_.decrypt(key_s_, he_.deserialize(f.payload), meter_, cat);
          if (cfg_.capture_uniformity)
            capture.t.insert(capture.t.end(), pt.slots.begin(), pt.slots.end());
          for (uint32_t s = 0; s < N_; ++s) {
            const uint64_t e2 = static_cast<uint64_t>(i) * N_ + s;
            u_ext[e2] = h1e[e2] ? mod_.add(x1e[e2], pt.slots[s]) : pt.slots[s];
          }
        }
        if (un.attr == CostAttr::inqueue) {
          const uint32_t b = un.idx;
          const RingTensor3 ut =
              to_tensor(std::span<const uint64_t>(u_ext.data(), cb.len_in), dims);
          const RingTensor3 y = conv_ref(ut, spec.kernel, spec.shape, mod_);
          plain_convs[L].first++;
          const std::vector<uint64_t> xdot =
              draw_residues(derive_seed(seed, L, kLabXdot, b), cb.len_out, p);
          y_share[b].resize(cb.len_out);
          for (uint64_t k = 0; k < cb.len_out; ++k) y_share[b][k] = mod_.sub(y.data[k], xdot[k]);
          xq[b].resize(cb.len_out);
          for (uint64_t k = 0; k < cb.len_out; ++k) xq[b][k] = mod_.add(xdot[k], xdd_q[b][k]);
          for (const auto& tp : cb.tails[b]) {
            if (tp.role != SlotRole::prior) continue;
            for (uint64_t c = 0; c < tp.ext_hi - tp.ext_lo; ++c)
              u_prior[tp.owner][tp.src_lo + c] = u_ext[tp.ext_lo + c];
          }
        } else {
          u_prior[un.idx].assign(u_ext.begin(), u_ext.begin() + cb.len_in);
        }
      }
    }
  } else {
    // Identity activation: u = x - r0 crosses in the clear (it is uniformly
    // masked); no sign protocol and no online HE at all.
    if (client()) {
      for (uint32_t b = 0; b < B_; ++b) {
        std::vector<uint64_t> t(cb.len_in);
        for (uint64_t k = 0; k < cb.len_in; ++k) t[k] = mod_.sub(xq[b][k], r0q[b][k]);
        link_.send(FrameType::plain_share, pack_residues(t),
                   Category{Phase::online, CostAttr::inqueue});
      }
      for (uint32_t j = 0; j < P_; ++j) {
        std::vector<uint64_t> t(cb.len_in);
        for (uint64_t k = 0; k < cb.len_in; ++k) t[k] = mod_.sub(xp[j][k], r0p[j][k]);
        link_.send(FrameType::plain_share, pack_residues(t),
                   Category{Phase::online, CostAttr::prior});
      }
    } else {
      for (uint32_t b = 0; b < B_; ++b) {
        const Frame f =
            link_.recv(FrameType::plain_share, Category{Phase::online, CostAttr::inqueue});
        const std::vector<uint64_t> t = unpack_residues(f.payload, cb.len_in, p);
        if (cfg_.capture_uniformity) capture.t.insert(capture.t.end(), t.begin(), t.end());
        std::vector<uint64_t> uvec(cb.len_in);
        for (uint64_t k = 0; k < cb.len_in; ++k) uvec[k] = mod_.add(xq[b][k], t[k]);
        const RingTensor3 y = conv_ref(to_tensor(uvec, dims), spec.kernel, spec.shape, mod_);
        plain_convs[L].first++;
        const std::vector<uint64_t> xdot =
            draw_residues(derive_seed(seed, L, kLabXdot, b), cb.len_out, p);
        y_share[b].resize(cb.len_out);
        for (uint64_t k = 0; k < cb.len_out; ++k) y_share[b][k] = mod_.sub(y.data[k], xdot[k]);
        xq[b].resize(cb.len_out);
        for (uint64_t k = 0; k < cb.len_out; ++k) xq[b][k] = mod_.add(xdot[k], xdd_q[b][k]);
      }
      for (uint32_t j = 0; j < P_; ++j) {
        const Frame f =
            link_.recv(FrameType::plain_share, Category{Phase::online, CostAttr::prior});
        const std::vector<uint64_t> t = unpack_residues(f.payload, cb.len_in, p);
        if (cfg_.capture_uniformity) capture.t.insert(capture.t.end(), t.begin(), t.end());
        for (uint64_t k = 0; k < cb.len_in; ++k) u_prior[j][k] = mod_.add(xp[j][k], t[k]);
      }
    }
  }

  // Urgent outputs, then the masked output shares back to the client.  The
  // urgent share either merges into the last in-queue frame (zero added
  // rounds) or travels as one attributed frame per urgent input.
  if (!client()) {
    for (uint32_t j = 0; j < P_; ++j) {
      const RingTensor3 y = conv_ref(to_tensor(u_prior[j], dims), spec.kernel, spec.shape, mod_);
      plain_convs[L].second++;
      const std::vector<uint64_t> xdot =
          draw_residues(derive_seed(seed, L, kLabXdotPrior, j), cb.len_out, p);
      prior_share[j].resize(cb.len_out);
      for (uint64_t k = 0; k < cb.len_out; ++k) prior_share[j][k] = mod_.sub(y.data[k], xdot[k]);
      xp[j].resize(cb.len_out);
      for (uint64_t k = 0; k < cb.len_out; ++k) xp[j][k] = mod_.add(xdot[k], xdd_p[j][k]);
    }
    if (cfg_.capture_uniformity) {
      for (const auto& v : y_share) capture.y.insert(capture.y.end(), v.begin(), v.end());
      for (const auto& v : prior_share) capture.y.insert(capture.y.end(), v.begin(), v.end());
    }
    for (uint32_t b = 0; b < B_; ++b) {
      const bool merged = cfg_.merge_final_share && b + 1 == B_ && P_ > 0;
      std::vector<uint8_t> payload = pack_residues(y_share[b]);
      if (merged) {
        for (uint32_t j = 0; j < P_; ++j) {
          const std::vector<uint8_t> pj = pack_residues(prior_share[j]);
          payload.insert(payload.end(), pj.begin(), pj.end());
        }
        link_.send(FrameType::merged_final_share, payload,
                   Category{Phase::online, CostAttr::inqueue},
                   static_cast<uint64_t>(P_) * cb.len_out * 8);
      } else {
        link_.send(FrameType::plain_share, payload, Category{Phase::online, CostAttr::inqueue});
      }
    }
    if (!cfg_.merge_final_share) {
      for (uint32_t j = 0; j < P_; ++j)
        link_.send(FrameType::plain_share, pack_residues(prior_share[j]),
                   Category{Phase::online, CostAttr::prior});
    }
  } else {
    for (uint32_t b = 0; b < B_; ++b) {
      const bool merged = cfg_.merge_final_share && b + 1 == B_ && P_ > 0;
      const Frame f =
          merged ? link_.recv(FrameType::merged_final_share,
                              Category{Phase::online, CostAttr::inqueue},
                              static_cast<uint64_t>(P_) * cb.len_out * 8)
                 : link_.recv(FrameType::plain_share, Category{Phase::online, CostAttr::inqueue});
      const size_t expect = cb.len_out * (merged ? 1 + P_ : 1);
      const std::vector<uint64_t> all = unpack_residues(f.payload, expect, p);
      xq[b].resize(cb.len_out);
      for (uint64_t k = 0; k < cb.len_out; ++k) xq[b][k] = mod_.add(w_q[b][k], all[k]);
      if (merged) {
        for (uint32_t j = 0; j < P_; ++j) {
          xp[j].resize(cb.len_out);
          for (uint64_t k = 0; k < cb.len_out; ++k)
            xp[j][k] = mod_.add(w_p[j][k], all[(1 + static_cast<uint64_t>(j)) * cb.len_out + k]);
        }
      }
    }
    if (!cfg_.merge_final_share) {
      for (uint32_t j = 0; j < P_; ++j) {
        const Frame f =
            link_.recv(FrameType::plain_share, Category{Phase::online, CostAttr::prior});
        const std::vector<uint64_t> ps = unpack_residues(f.payload, cb.len_out, p);
        xp[j].resize(cb.len_out);
        for (uint64_t k = 0; k < cb.len_out; ++k) xp[j][k] = mod_.add(w_p[j][k], ps[k]);
      }
    }
  }

  reports.push_back(rep);
}

// Validates the model against the running activation dims; returns nothing
// but throws std::invalid_argument with a specific message on any mismatch.
void validate_session(const SessionConfig& cfg, const std::vector<LayerSpec>& model,
                      const SessionInputs& inputs) {
  cfg.slots.validate();
  if (model.empty()) throw std::invalid_argument("run_session: empty model");
  if (model[0].kind != LayerSpec::Kind::conv)
    throw std::invalid_argument("run_session: the first layer must be a convolution");
  if (cfg.n_inqueue == 0) throw std::invalid_argument("run_session: empty in-queue batch");
  const uint32_t B = cfg.n_inqueue;
  const uint32_t Q = cfg.n_offline_pool ? cfg.n_offline_pool : B;
  const uint32_t P = cfg.n_priors;
  if (Q < B)
    throw std::invalid_argument("run_session: offline pool smaller than the in-queue batch");

  const uint64_t p = cfg.slots.p;
  Dims dims{model[0].shape.Ci, model[0].shape.Hi, model[0].shape.Wi};
  for (const LayerSpec& spec : model) {
    switch (spec.kind) {
      case LayerSpec::Kind::conv: {
        if (spec.shape.Ci != dims.C || spec.shape.Hi != dims.H || spec.shape.Wi != dims.W)
          throw std::invalid_argument("run_session: convolution input shape mismatch");
        const Kernel& k = spec.kernel;
        if (k.Co != spec.shape.Co || k.Ci != spec.shape.Ci || k.Hf != spec.shape.Hf ||
            k.Wf != spec.shape.Wf)
          throw std::invalid_argument("run_session: kernel does not match the layer shape");
        for (uint64_t v : k.data)
          if (v >= p) throw std::invalid_argument("run_session: kernel residue out of range");
        // Builds the layouts too, so geometry errors surface before threads.
        (void)make_conv_block(spec, dims, cfg.slots, B, Q, P);
        const OutDims od = out_dims(spec.shape);
        dims = {spec.shape.Co, od.Ho, od.Wo};
        break;
      }
      case LayerSpec::Kind::meanpool_sum:
        if (spec.pool_win == 0)
          throw std::invalid_argument("run_session: pooling window must be positive");
        if (dims.H % spec.pool_win != 0 || dims.W % spec.pool_win != 0)
          throw std::invalid_argument("run_session: pooling window does not tile the input");
        dims = {dims.C, dims.H / spec.pool_win, dims.W / spec.pool_win};
        break;
      case LayerSpec::Kind::batchnorm:
        if (spec.bn_scale.size() != dims.C || spec.bn_shift.size() != dims.C)
          throw std::invalid_argument("run_session: batchnorm parameter size mismatch");
        for (uint64_t v : spec.bn_scale)
          if (v >= p) throw std::invalid_argument("run_session: batchnorm residue out of range");
        for (uint64_t v : spec.bn_shift)
          if (v >= p) throw std::invalid_argument("run_session: batchnorm residue out of range");
        break;
    }
  }

  const uint64_t len0 = static_cast<uint64_t>(model[0].shape.Ci) * model[0].shape.Hi *
                        model[0].shape.Wi;
  auto check_group = [&](const std::vector<std::vector<uint64_t>>& g, size_t count,
                         const char* what) {
    if (g.size() != count)
      throw std::invalid_argument(std::string("run_session: wrong number of ") + what);
    for (const auto& v : g) {
      if (v.size() != len0)
        throw std::invalid_argument(std::string("run_session: ") + what +
                                    " length does not match the first layer");
      for (uint64_t x : v)
        if (x >= p)
          throw std::invalid_argument(std::string("run_session: ") + what +
                                      " residue out of range");
    }
  };
  check_group(inputs.inqueue0, B, "in-queue client shares");
  check_group(inputs.inqueue1, B, "in-queue server shares");
  check_group(inputs.prior0, P, "urgent client shares");
  check_group(inputs.prior1, P, "urgent server shares");
}

std::string error_text(std::exception_ptr ep) {
  if (!ep) return {};
  try {
    std::rethrow_exception(ep);
  } catch (const std::exception& ex) {
    return ex.what();
  } catch (...) {
    return "unknown error";
  }
}

}  // namespace

CostSnapshot expected_relu_block_counts(const ConvShape& shape, const SlotParams& params,
                                        uint32_t pool, uint32_t batch) {
  const OnlinePlan op = plan_online(shape, params);
  const OfflinePlan fp = plan_offline(shape, params);
  if (fp.wide_row)
    throw std::invalid_argument("expected_relu_block_counts: wide-row geometry is plan-only");
  CostSnapshot s;
  auto set = [&](Phase ph, HeOp o, uint64_t v) {
    s.v[static_cast<size_t>(ph)][static_cast<size_t>(CostAttr::inqueue)][static_cast<size_t>(o)] =
        v;
  };
  const uint64_t cpi = op.cts_per_input;
  const uint64_t folds = static_cast<uint64_t>(pool) * shape.Co * fp.n;
  set(Phase::offline, HeOp::enc, static_cast<uint64_t>(pool) * fp.n + 2 * batch * cpi);
  set(Phase::offline, HeOp::cmult, folds);
  set(Phase::offline, HeOp::add, folds);
  set(Phase::offline, HeOp::dec, static_cast<uint64_t>(pool) * shape.Co);
  set(Phase::online, HeOp::cmult, 2 * static_cast<uint64_t>(batch) * cpi);
  set(Phase::online, HeOp::add, 2 * static_cast<uint64_t>(batch) * cpi);
  set(Phase::online, HeOp::dec, static_cast<uint64_t>(batch) * cpi);
  return s;
}

CostSnapshot expected_identity_block_counts(const ConvShape& shape, const SlotParams& params,
                                            uint32_t pool, uint32_t batch) {
  (void)batch;
  const OfflinePlan fp = plan_offline(shape, params);
  if (fp.wide_row)
    throw std::invalid_argument("expected_identity_block_counts: wide-row geometry is plan-only");
  CostSnapshot s;
  auto set = [&](Phase ph, HeOp o, uint64_t v) {
    s.v[static_cast<size_t>(ph)][static_cast<size_t>(CostAttr::inqueue)][static_cast<size_t>(o)] =
        v;
  };
  const uint64_t folds = static_cast<uint64_t>(pool) * shape.Co * fp.n;
  set(Phase::offline, HeOp::enc, static_cast<uint64_t>(pool) * fp.n);
  set(Phase::offline, HeOp::cmult, folds);
  set(Phase::offline, HeOp::add, folds);
  set(Phase::offline, HeOp::dec, static_cast<uint64_t>(pool) * shape.Co);
  return s;
}

std::string session_config_digest(const SessionConfig& cfg, const std::vector<LayerSpec>& model) {
  const uint32_t Q = cfg.n_offline_pool ? cfg.n_offline_pool : cfg.n_inqueue;
  std::ostringstream os;
  os << "v1|N=" << cfg.slots.N << "|p=" << cfg.slots.p << "|wire=" << cfg.slots.wire_bytes()
     << "|seed=" << cfg.seed << "|B=" << cfg.n_inqueue << "|Q=" << Q << "|P=" << cfg.n_priors
     << "|merge=" << (cfg.merge_final_share ? 1 : 0)
     << "|drelu=" << (cfg.drelu_mode == DreluMode::dealer ? "dealer" : "ot") << "|model=";
  for (const LayerSpec& spec : model) {
    switch (spec.kind) {
      case LayerSpec::Kind::conv:
        os << "conv(" << (spec.act == ActKind::relu ? "relu" : "id") << ")[" << spec.shape.Ci
           << "," << spec.shape.Hi << "," << spec.shape.Wi << "," << spec.shape.Co << ","
           << spec.shape.Hf << "," << spec.shape.Wf << "," << spec.shape.stride << ","
           << (spec.shape.pad == Padding::same ? "s" : "v") << "]k" << std::hex
           << fold_vec(spec.kernel.data) << std::dec << ";";
        break;
      case LayerSpec::Kind::meanpool_sum:
        os << "mp[" << spec.pool_win << "];";
        break;
      case LayerSpec::Kind::batchnorm:
        os << "bn[" << spec.bn_scale.size() << "]" << std::hex << fold_vec(spec.bn_scale) << ","
           << fold_vec(spec.bn_shift) << std::dec << ";";
        break;
    }
  }
  return config_digest(os.str());
}

SessionResult run_session(const SessionConfig& cfg, const std::vector<LayerSpec>& model,
                          const SessionInputs& inputs, FrameTap* client_tap) {
  validate_session(cfg, model, inputs);

  ReferenceBackend backend(cfg.slots);
  CostMeter meter;
  // Keys are created before the party threads so handle ids are stable.
  const KeyHandle key_c = backend.keygen(Party::client);
  const KeyHandle key_s = backend.keygen(Party::server);

  auto chans = cfg.transport == TransportKind::tcp ? make_tcp_pair()
                                                   : make_inproc_pair(cfg.channel_capacity);

  SessionResult res;
  res.config_digest = session_config_digest(cfg, model);

  // Working copies of the shares; the runners update them in place.
  std::vector<std::vector<uint64_t>> xq0 = inputs.inqueue0, xp0 = inputs.prior0;
  std::vector<std::vector<uint64_t>> xq1 = inputs.inqueue1, xp1 = inputs.prior1;

  std::vector<BlockReport> client_reports;
  std::vector<std::pair<uint64_t, uint64_t>> server_convs;
  ServerCapture server_cap;
  uint64_t words = 0, ots = 0;

  std::exception_ptr srv_err, cli_err;
  std::thread srv([&, ch = std::move(chans.second)]() mutable {
    try {
      Link link(*ch, Dir::s2c);
      PartyRunner runner(kServer, cfg, model, backend, meter, link, key_c, key_s);
      runner.run(xq1, xp1);
      server_convs = std::move(runner.plain_convs);
      server_cap = std::move(runner.capture);
    } catch (...) {
      srv_err = std::current_exception();
    }
    ch.reset();  // unblocks a peer waiting on this channel
  });
  {
    std::unique_ptr<ByteChannel> ch = std::move(chans.first);
    try {
      Link link(*ch, Dir::c2s, &res.transcript, client_tap);
      PartyRunner runner(kClient, cfg, model, backend, meter, link, key_c, key_s);
      runner.run(xq0, xp0);
      client_reports = std::move(runner.reports);
      words = runner.triple_words();
      ots = runner.base_ots();
    } catch (...) {
      cli_err = std::current_exception();
    }
    ch.reset();
  }
  srv.join();

  if (srv_err || cli_err) {
    // Prefer the root cause: a party that died first leaves the other with a
    // closed-channel error.
    const std::string cm = error_text(cli_err);
    if (cli_err && (!srv_err || cm.find("channel closed") == std::string::npos))
      std::rethrow_exception(cli_err);
    std::rethrow_exception(srv_err);
  }

  res.inqueue0 = std::move(xq0);
  res.inqueue1 = std::move(xq1);
  res.prior0 = std::move(xp0);
  res.prior1 = std::move(xp1);
  res.he_delta = meter.snapshot();
  res.gmw_triple_words = words;
  res.base_ots = ots;
  res.blocks = std::move(client_reports);
  for (auto& rep : res.blocks) {
    if (rep.kind == LayerSpec::Kind::conv && rep.layer < server_convs.size()) {
      rep.plain_convs_inqueue = server_convs[rep.layer].first;
      rep.plain_convs_prior = server_convs[rep.layer].second;
    }
  }
  res.captured_t = std::move(server_cap.t);
  res.captured_y_share = std::move(server_cap.y);
  return res;
}

}  // namespace qj
