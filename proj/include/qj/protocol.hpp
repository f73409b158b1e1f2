// Two-party private-inference engine over additive shares.
//
// The client (party 0) and server (party 1) each hold an additive share of
// every activation; the server additionally holds the model weights.  Each
// convolution block runs in two phases:
//
//   offline - the client encrypts the receptive-field matrix of a random
//     mask r0 for every pooled input; the server folds its kernel into the
//     ciphertexts (cmult + add only), subtracts a fresh mask, and returns
//     C_o result ciphertexts per pooled input.  The idle span of every
//     ciphertext carries column chunks of an urgent input's mask matrix, so
//     urgent offline work rides along at zero extra HE cost.  For ReLU
//     blocks the server also encrypts, per online input, its share-dependent
//     activation ciphertexts (its DReLU output share is pre-drawn fresh
//     randomness, so nothing online-secret is needed).
//
//   online - a bitsliced GMW subprotocol computes shares of the activation
//     sign; the client then evaluates, per ciphertext, two cmults and two
//     additions on the server's prepared ciphertexts and sends the result.
//     The server decrypts, applies one plaintext convolution per input, and
//     returns masked output shares.  Urgent inputs ride in the idle tail
//     slots of the in-queue ciphertexts: their activation crosses inside
//     frames that exist anyway, and only one extra share frame (or zero,
//     when merged into the final in-queue frame) comes back.
//
// No rotations, no slot extraction, no ct-ct multiplication -- the meter's
// rot/extr counters prove it.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qj/he.hpp"
#include "qj/plan.hpp"
#include "qj/ring.hpp"
#include "qj/transport.hpp"

namespace qj {

enum class ActKind : uint8_t { identity, relu };
enum class DreluMode : uint8_t { dealer, ot };
enum class TransportKind : uint8_t { inproc, tcp };

// One model layer.  Dot / fully-connected layers are expressed as 1x1
// convolutions over a 1x1 spatial grid by the caller; the engine itself has
// no separate dot kind.
struct LayerSpec {
  enum class Kind : uint8_t { conv, meanpool_sum, batchnorm };

  Kind kind = Kind::conv;

  // kind == conv: geometry, server-held weights, activation applied to the
  // *input* of the convolution (identity for the very first layer).
  ConvShape shape;
  Kernel kernel;
  ActKind act = ActKind::relu;

  // kind == meanpool_sum: non-overlapping win x win window sums (the 1/win^2
  // divisor is public and folded into neighbouring scales by the caller).
  uint32_t pool_win = 2;

  // kind == batchnorm: public per-channel affine.  The scale multiplies both
  // shares; the shift lands on the server share only.
  std::vector<uint64_t> bn_scale, bn_shift;

  static LayerSpec conv_layer(const ConvShape& s, Kernel k, ActKind a) {
    LayerSpec l;
    l.kind = Kind::conv;
    l.shape = s;
    l.kernel = std::move(k);
    l.act = a;
    return l;
  }
  static LayerSpec meanpool(uint32_t win) {
    LayerSpec l;
    l.kind = Kind::meanpool_sum;
    l.pool_win = win;
    return l;
  }
  static LayerSpec batchnorm_layer(std::vector<uint64_t> scale, std::vector<uint64_t> shift) {
    LayerSpec l;
    l.kind = Kind::batchnorm;
    l.bn_scale = std::move(scale);
    l.bn_shift = std::move(shift);
    return l;
  }
};

struct SessionConfig {
  SlotParams slots;
  uint64_t seed = 1;
  uint32_t n_inqueue = 1;     // in-queue batch size B
  uint32_t n_offline_pool = 0;  // pooled offline inputs Q; 0 selects B
  uint32_t n_priors = 0;      // urgent inputs P
  bool merge_final_share = false;  // append urgent shares to the last in-queue frame
  DreluMode drelu_mode = DreluMode::dealer;
  bool capture_uniformity = false;  // server records decrypted t and masked-share residues
  TransportKind transport = TransportKind::inproc;
  size_t channel_capacity = size_t{1} << 22;
};

// Party shares of the inputs, flat channel-major vectors of length
// Ci*Hi*Wi of the first layer.  inqueue0[b] + inqueue1[b] reconstructs
// in-queue input b; prior0[j] + prior1[j] reconstructs urgent input j.
struct SessionInputs {
  std::vector<std::vector<uint64_t>> inqueue0, inqueue1;
  std::vector<std::vector<uint64_t>> prior0, prior1;
};

// Per-layer execution report (merged from both parties).
struct BlockReport {
  uint32_t layer = 0;
  LayerSpec::Kind kind = LayerSpec::Kind::conv;
  bool relu = false;
  bool online_recycling = false;   // urgent activations rode in-queue tail slots
  bool offline_recycling = false;  // urgent mask rows rode pooled ciphertext tails
  bool online_dedicated_prior = false;   // no idle tail slots: dedicated urgent run
  bool offline_dedicated_prior = false;  // no idle offline span: dedicated urgent pool entries
  uint64_t prior_chunks_needed = 0;  // offline column chunks per urgent input
  uint64_t prior_chunks_done = 0;    // minimum completed over the urgent inputs
  uint64_t plain_convs_inqueue = 0;  // server-side plaintext convolutions
  uint64_t plain_convs_prior = 0;
  uint64_t separate_prior_frames = 0;  // online server->client urgent share frames
};

struct SessionResult {
  // Final shares after the last layer (same layout as SessionInputs).
  std::vector<std::vector<uint64_t>> inqueue0, inqueue1;
  std::vector<std::vector<uint64_t>> prior0, prior1;

  Transcript transcript;  // client-side view: every frame in both directions
  CostSnapshot he_delta;  // all HE operations of the session
  uint64_t gmw_triple_words = 0;  // Beaver words consumed per party
  uint64_t base_ots = 0;          // oblivious transfers performed (ot mode)
  std::vector<BlockReport> blocks;
  std::vector<uint64_t> captured_t;        // decrypted t residues (capture flag)
  std::vector<uint64_t> captured_y_share;  // masked output-share residues (capture flag)
  std::string config_digest;
};

// Closed-form HE operation counts for one ReLU-convolution block executed
// with a pooled offline batch of `pool` and an online batch of `batch`,
// assuming recycled layouts (narrow rows).  Urgent inputs add nothing --
// every count lands in the inqueue column by construction.
CostSnapshot expected_relu_block_counts(const ConvShape& shape, const SlotParams& params,
                                        uint32_t pool, uint32_t batch);

// Same for an identity-activation block (no online HE at all).
CostSnapshot expected_identity_block_counts(const ConvShape& shape, const SlotParams& params,
                                            uint32_t pool, uint32_t batch);

// Canonical digest of everything that shapes the transcript (slot geometry,
// seed, batch sizes, merge flag, sign-protocol mode, model architecture).
std::string session_config_digest(const SessionConfig& cfg, const std::vector<LayerSpec>& model);

// Runs a full two-party session: the server party on an internal thread, the
// client party on the calling thread, connected by an in-process or TCP
// channel pair.  `client_tap` (optional) observes every client-side frame,
// e.g. for recording or replay checking.  Throws std::invalid_argument on
// contract violations (mismatched shapes, short pools, wide output rows).
SessionResult run_session(const SessionConfig& cfg, const std::vector<LayerSpec>& model,
                          const SessionInputs& inputs, FrameTap* client_tap = nullptr);

}  // namespace qj
