// Slot-recycling geometry.
//
// The engine batches inference inputs so that idle SIMD slots in their
// ciphertexts carry an urgent ("jumping") input's data.  This header computes
// all of that geometry: idle-slot counts for the online activation ciphertexts
// and the offline randomness ciphertexts, gcd-chained group sizes, per-urgent
// batch sizes, dot-product packing, explicit slot layouts for both phases, and
// the checkers that validate a layout is a disjoint total cover.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qj/ring.hpp"

namespace qj {

struct SlotParams {
  uint32_t N = 8192;           // SIMD slots per ciphertext (power of two)
  uint64_t p = 0;              // plaintext modulus
  uint64_t ct_wire_bytes = 0;  // serialized ciphertext size; 0 selects N*16

  uint64_t wire_bytes() const { return ct_wire_bytes ? ct_wire_bytes : static_cast<uint64_t>(N) * 16; }
  void validate() const;
};

// ---------------------------------------------------------------------------
// Online plan: packing of the length Ci*Hi*Wi activation vector into
// ceil(len/N) ciphertexts, with the tail ciphertext's idle slots recycled.
struct OnlinePlan {
  ConvShape shape;
  OutDims od;
  uint64_t len = 0;            // Ci*Hi*Wi elements per input
  uint32_t cts_per_input = 0;  // ceil(len/N)
  uint64_t s_hat = 0;          // idle slots in the tail ciphertext
  // Chain-group sizes (all zero when s_hat == 0):
  uint64_t g = 0;              // gcd(s_hat, len)
  uint64_t group_inqueue = 0;  // len/g in-queue inputs per chain group
  uint64_t group_priors = 0;   // s_hat/g urgent inputs served per group
  uint64_t per_prior_batch = 0;  // ceil(len/s_hat); 0 means "no recycling"

  bool recycling() const { return s_hat != 0; }
  // Published-table display convention: 1 means a dedicated run is needed.
  uint64_t bsize_display() const { return recycling() ? per_prior_batch : 1; }
};

OnlinePlan plan_online(const ConvShape& shape, const SlotParams& params);

// ---------------------------------------------------------------------------
// Offline plan: packing of the receptive-field matrix (rows = Hf*Wf*Ci, each
// row of length Ho*Wo) into ciphertexts, rows_per_ct rows per ciphertext,
// with the per-ciphertext idle span [N - s_tilde, N) recycled for an urgent
// input's rows, column chunk by column chunk.
struct OfflinePlan {
  ConvShape shape;
  OutDims od;
  uint64_t out_positions = 0;  // Ho*Wo (row length)
  uint64_t rows = 0;           // Hf*Wf*Ci

  bool wide_row = false;  // Ho*Wo > N: one row spans several ciphertexts
  // Narrow-row geometry (wide_row == false):
  uint64_t rows_per_ct = 0;  // floor(N / (Ho*Wo))
  uint64_t n = 0;            // ciphertexts per pooled input's matrix
  uint64_t s_tilde = 0;      // N mod (Ho*Wo) idle slots per ciphertext
  uint64_t col_chunks = 0;   // ceil(Ho*Wo / s_tilde)
  uint64_t rows_group = 0;   // ceil(rows / n) inputs to cover all rows of a chunk
  // Wide-row geometry:
  uint64_t cts_per_row = 0;  // ceil(Ho*Wo / N)
  uint64_t wide_idle = 0;    // cts_per_row*N - Ho*Wo idle slots per row

  uint64_t per_prior_batch = 0;  // 0 means "no recycling"

  bool recycling() const { return per_prior_batch != 0; }
  uint64_t bsize_display() const { return recycling() ? per_prior_batch : 1; }
};

OfflinePlan plan_offline(const ConvShape& shape, const SlotParams& params);

// ---------------------------------------------------------------------------
// Dot-product plan: a ciphertext packs floor(N/n_i) weight-row segments of
// length n_i; the N mod n_i idle slots recycle an urgent input's vector.
struct DotPlan {
  uint64_t n_i = 0, n_o = 0;
  bool wide_row = false;     // n_i > N
  uint64_t rows_per_ct = 0;  // floor(N / n_i) row segments per ciphertext
  uint64_t n = 0;            // ciphertexts covering all n_o rows
  uint64_t idle = 0;         // idle slots per ciphertext (or per row when wide)
  uint64_t cts_per_row = 0;  // wide rows only
  uint64_t per_prior_batch = 0;  // 0 means "no recycling"

  bool recycling() const { return per_prior_batch != 0; }
};

DotPlan plan_dot(uint64_t n_i, uint64_t n_o, const SlotParams& params);

// ---------------------------------------------------------------------------
// Chain layout: the explicit slot assignment for a batch of in-queue inputs
// plus the urgent inputs recycled into their idle slots.
enum class SlotRole : uint8_t { inqueue, prior, unused };

struct SlotAssign {
  SlotRole role = SlotRole::unused;
  uint32_t owner = 0;    // batch position (inqueue) or urgent position (prior)
  uint32_t ct = 0;       // global ciphertext index within the layout
  uint64_t slot_lo = 0, slot_hi = 0;  // [lo, hi) slot range
  // Source description.  Online: flat element range [src_lo, src_hi).
  // Offline: matrix row src_row, column range [src_lo, src_hi).
  uint32_t src_row = 0;
  uint64_t src_lo = 0, src_hi = 0;
};

struct ChainLayout {
  bool online = true;
  uint32_t N = 0;
  uint32_t total_cts = 0;
  uint32_t n_batch = 0;
  uint32_t n_priors = 0;
  // Online: element count per urgent input.  Offline: matrix geometry.
  uint64_t prior_len = 0;
  uint64_t prior_rows = 0, prior_cols = 0;
  std::vector<SlotAssign> assigns;
};

// Online layout over n_batch in-queue inputs' tail spans.  Requires
// n_batch*s_hat >= n_priors*len; throws std::invalid_argument otherwise or
// when the plan has no recycling.
ChainLayout build_chain_layout(const OnlinePlan& plan, uint32_t n_batch, uint32_t n_priors);

// Offline layout; requires n_batch >= n_priors*per_prior_batch (urgent input
// j is served by inputs [j*per_prior_batch, (j+1)*per_prior_batch)) unless
// allow_partial is set, in which case a smaller batch covers only a prefix
// of the urgent inputs' chunks (the conservation checker then reports the
// gap, by design).
ChainLayout build_chain_layout(const OfflinePlan& plan, uint32_t n_batch, uint32_t n_priors,
                               bool allow_partial = false);

struct LayoutCheck {
  bool ok = true;
  std::string detail;  // first violation, empty when ok
};

// Disjoint total cover: within every ciphertext the assigned ranges are
// pairwise disjoint and their union is exactly [0, N).
LayoutCheck check_disjoint_total_cover(const ChainLayout& layout);

// Conservation: concatenating each urgent input's prior-role ranges in
// (ciphertext, slot) order yields its full element sequence exactly once
// (online: elements 0..len-1; offline: cells in chunk-major canonical order).
LayoutCheck check_prior_conservation(const ChainLayout& layout);

// Per-urgent fragment sizes in traversal order (online layouts).
std::vector<std::vector<uint64_t>> prior_fragments(const ChainLayout& layout);

// Test hook: corrupt one prior assignment (shift its slot range) so the
// checkers must report a violation.  kind 0 shifts a range into overlap,
// kind 1 drops one slot from a range.
void inject_layout_fault(ChainLayout& layout, int kind);

// ---------------------------------------------------------------------------
// Channel segmentation: split Ci so every part's online per-urgent batch size
// is at most max_batch.  Parts partition the channel range in order.
std::vector<ConvShape> segment_shape(const ConvShape& shape, const SlotParams& params,
                                     uint64_t max_batch);

// Whole-model batch size: the maximum per-urgent batch over blocks that
// recycle; blocks without recycling are flagged (they force a dedicated run).
struct ModelBatch {
  uint64_t batch = 0;                     // 0 when no block recycles
  std::vector<size_t> new_run_blocks;     // indices of plans with s_hat == 0
};
ModelBatch model_batch_size(const std::vector<OnlinePlan>& plans);

}  // namespace qj
