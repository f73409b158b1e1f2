#include "qj/plan.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace qj {

namespace {

uint64_t ceil_div(uint64_t a, uint64_t b) { return (a + b - 1) / b; }

}  // namespace

void SlotParams::validate() const {
  if (N < 2 || (N & (N - 1)) != 0)
    throw std::invalid_argument("SlotParams: N must be a power of two >= 2");
  if (p < 3) throw std::invalid_argument("SlotParams: modulus not set");
}

OnlinePlan plan_online(const ConvShape& shape, const SlotParams& params) {
  params.validate();
  OnlinePlan plan;
  plan.shape = shape;
  plan.od = out_dims(shape);
  plan.len = static_cast<uint64_t>(shape.Ci) * shape.Hi * shape.Wi;
  plan.cts_per_input = static_cast<uint32_t>(ceil_div(plan.len, params.N));
  plan.s_hat = static_cast<uint64_t>(plan.cts_per_input) * params.N - plan.len;
  if (plan.s_hat != 0) {
    plan.g = std::gcd(plan.s_hat, plan.len);
    plan.group_inqueue = plan.len / plan.g;
    plan.group_priors = plan.s_hat / plan.g;
    plan.per_prior_batch = ceil_div(plan.len, plan.s_hat);
  }
  return plan;
}

OfflinePlan plan_offline(const ConvShape& shape, const SlotParams& params) {
  params.validate();
  OfflinePlan plan;
  plan.shape = shape;
  plan.od = out_dims(shape);
  plan.out_positions = static_cast<uint64_t>(plan.od.Ho) * plan.od.Wo;
  plan.rows = static_cast<uint64_t>(shape.Hf) * shape.Wf * shape.Ci;
  if (plan.out_positions > params.N) {
    plan.wide_row = true;
    plan.cts_per_row = ceil_div(plan.out_positions, params.N);
    plan.wide_idle = plan.cts_per_row * params.N - plan.out_positions;
    plan.n = plan.rows * plan.cts_per_row;
    if (plan.wide_idle != 0) plan.per_prior_batch = ceil_div(plan.out_positions, plan.wide_idle);
    return plan;
  }
  plan.rows_per_ct = params.N / plan.out_positions;
  plan.n = ceil_div(plan.rows, plan.rows_per_ct);
  plan.s_tilde = params.N % plan.out_positions;
  if (plan.s_tilde != 0) {
    plan.col_chunks = ceil_div(plan.out_positions, plan.s_tilde);
    plan.rows_group = ceil_div(plan.rows, plan.n);
    plan.per_prior_batch = plan.rows_group * plan.col_chunks;
  }
  return plan;
}

DotPlan plan_dot(uint64_t n_i, uint64_t n_o, const SlotParams& params) {
  params.validate();
  if (n_i == 0 || n_o == 0) throw std::invalid_argument("plan_dot: dimensions must be positive");
  DotPlan plan;
  plan.n_i = n_i;
  plan.n_o = n_o;
  if (n_i > params.N) {
    plan.wide_row = true;
    plan.cts_per_row = ceil_div(n_i, params.N);
    plan.idle = plan.cts_per_row * params.N - n_i;
    plan.n = n_o * plan.cts_per_row;
    if (plan.idle != 0) plan.per_prior_batch = ceil_div(n_i, plan.idle);
    return plan;
  }
  plan.rows_per_ct = params.N / n_i;
  plan.n = ceil_div(n_o, plan.rows_per_ct);
  plan.idle = params.N % n_i;
  if (plan.idle != 0) plan.per_prior_batch = ceil_div(n_i, plan.idle);
  return plan;
}

// ---------------------------------------------------------------------------

ChainLayout build_chain_layout(const OnlinePlan& plan, uint32_t n_batch, uint32_t n_priors) {
  if (!plan.recycling()) throw std::invalid_argument("build_chain_layout: plan has no recycling");
  if (n_batch == 0) throw std::invalid_argument("build_chain_layout: empty batch");
  const uint64_t tail_capacity = static_cast<uint64_t>(n_batch) * plan.s_hat;
  if (tail_capacity < static_cast<uint64_t>(n_priors) * plan.len)
    throw std::invalid_argument(
        "build_chain_layout: batch tails cannot carry the requested urgent inputs");

  // The SIMD slot width used below.  Per-input slot capacity is
  // cts_per_input*N = len + s_hat by construction.
  const uint64_t N = plan.len + plan.s_hat;  // extended element span per input
  const uint32_t cpi = plan.cts_per_input;
  const uint64_t slotN = N / cpi;  // == params.N

  ChainLayout layout;
  layout.online = true;
  layout.N = static_cast<uint32_t>(slotN);
  layout.total_cts = n_batch * cpi;
  layout.n_batch = n_batch;
  layout.n_priors = n_priors;
  layout.prior_len = plan.len;

  for (uint32_t b = 0; b < n_batch; ++b) {
    const uint32_t ct0 = b * cpi;
    // Own elements occupy extended positions [0, len).
    for (uint32_t i = 0; i < cpi; ++i) {
      const uint64_t lo = static_cast<uint64_t>(i) * slotN;
      const uint64_t hi = std::min<uint64_t>(lo + slotN, plan.len);
      if (lo >= plan.len) break;
      layout.assigns.push_back({SlotRole::inqueue, b, ct0 + i, lo - static_cast<uint64_t>(i) * slotN,
                                hi - static_cast<uint64_t>(i) * slotN, 0, lo, hi});
    }
    // Tail: extended positions [len, len + s_hat) sit in the last ciphertext.
    // Input b's tail covers the global tail stream [b*s_hat, (b+1)*s_hat);
    // urgent input j owns stream interval [j*len, (j+1)*len).
    const uint64_t stream_lo = static_cast<uint64_t>(b) * plan.s_hat;
    const uint64_t stream_hi = stream_lo + plan.s_hat;
    const uint64_t tail_slot0 = slotN - plan.s_hat;  // within the last ct
    uint64_t cursor = stream_lo;
    while (cursor < stream_hi) {
      const uint64_t j = cursor / plan.len;
      uint64_t piece_hi = std::min(stream_hi, (j + 1) * plan.len);
      SlotAssign a;
      a.ct = ct0 + cpi - 1;
      a.slot_lo = tail_slot0 + (cursor - stream_lo);
      a.slot_hi = tail_slot0 + (piece_hi - stream_lo);
      if (j < n_priors) {
        a.role = SlotRole::prior;
        a.owner = static_cast<uint32_t>(j);
        a.src_lo = cursor - j * plan.len;
        a.src_hi = piece_hi - j * plan.len;
      } else {
        a.role = SlotRole::unused;
        piece_hi = stream_hi;  // merge the rest into one unused range
        a.slot_hi = tail_slot0 + (piece_hi - stream_lo);
      }
      layout.assigns.push_back(a);
      cursor = piece_hi;
    }
  }
  return layout;
}

ChainLayout build_chain_layout(const OfflinePlan& plan, uint32_t n_batch, uint32_t n_priors,
                               bool allow_partial) {
  if (plan.wide_row)
    throw std::invalid_argument("build_chain_layout: wide-row offline layout is not supported");
  if (!plan.recycling()) throw std::invalid_argument("build_chain_layout: plan has no recycling");
  if (n_batch == 0) throw std::invalid_argument("build_chain_layout: empty batch");
  if (!allow_partial && static_cast<uint64_t>(n_batch) < plan.per_prior_batch * n_priors)
    throw std::invalid_argument(
        "build_chain_layout: batch too small for the requested urgent inputs");

  // Slot structure of each pool ciphertext: own rows at [m*HoWo, (m+1)*HoWo),
  // the recycled segment pinned at [N - s_tilde, N), zeros in between.
  const uint64_t HoWo = plan.out_positions;
  const uint64_t slotN = plan.rows_per_ct * HoWo + plan.s_tilde;

  ChainLayout layout;
  layout.online = false;
  layout.N = static_cast<uint32_t>(slotN);
  layout.total_cts = n_batch * static_cast<uint32_t>(plan.n);
  layout.n_batch = n_batch;
  layout.n_priors = n_priors;
  layout.prior_rows = plan.rows;
  layout.prior_cols = HoWo;

  for (uint32_t q = 0; q < n_batch; ++q) {
    const uint64_t serve = q / plan.per_prior_batch;      // urgent input index
    const uint64_t qq = q % plan.per_prior_batch;         // index within its service group
    const uint64_t cc = qq / plan.rows_group;             // column chunk
    const uint64_t ro = qq % plan.rows_group;             // row-offset step
    const uint64_t col_lo = cc * plan.s_tilde;
    const uint64_t col_hi = std::min(col_lo + plan.s_tilde, HoWo);

    for (uint64_t i = 0; i < plan.n; ++i) {
      const uint32_t ct = q * static_cast<uint32_t>(plan.n) + static_cast<uint32_t>(i);
      const uint64_t own_rows =
          std::min(plan.rows_per_ct, plan.rows - std::min(plan.rows, i * plan.rows_per_ct));
      // Own rows.
      for (uint64_t mrow = 0; mrow < own_rows; ++mrow) {
        SlotAssign a;
        a.role = SlotRole::inqueue;
        a.owner = q;
        a.ct = ct;
        a.slot_lo = mrow * HoWo;
        a.slot_hi = (mrow + 1) * HoWo;
        a.src_row = static_cast<uint32_t>(i * plan.rows_per_ct + mrow);
        a.src_lo = 0;
        a.src_hi = HoWo;
        layout.assigns.push_back(a);
      }
      // Gap between the last own row and the recycled segment.
      if (own_rows * HoWo < slotN - plan.s_tilde) {
        layout.assigns.push_back({SlotRole::unused, 0, ct, own_rows * HoWo, slotN - plan.s_tilde,
                                  0, 0, 0});
      }
      // Recycled segment at the pinned top range.
      const uint64_t prior_row = ro * plan.n + i;
      SlotAssign t;
      t.ct = ct;
      t.slot_lo = slotN - plan.s_tilde;
      t.slot_hi = slotN;
      if (serve < n_priors && prior_row < plan.rows && col_hi > col_lo) {
        t.role = SlotRole::prior;
        t.owner = static_cast<uint32_t>(serve);
        t.src_row = static_cast<uint32_t>(prior_row);
        t.src_lo = col_lo;
        t.src_hi = col_hi;
        if (col_hi - col_lo < plan.s_tilde) {
          // Narrow final chunk: the unfilled top of the segment stays unused.
          t.slot_hi = t.slot_lo + (col_hi - col_lo);
          layout.assigns.push_back(t);
          layout.assigns.push_back({SlotRole::unused, 0, ct, t.slot_hi, slotN, 0, 0, 0});
          continue;
        }
      } else {
        t.role = SlotRole::unused;
      }
      layout.assigns.push_back(t);
    }
  }
  return layout;
}

LayoutCheck check_disjoint_total_cover(const ChainLayout& layout) {
  std::vector<std::vector<const SlotAssign*>> per_ct(layout.total_cts);
  for (const auto& a : layout.assigns) {
    if (a.ct >= layout.total_cts) return {false, "assignment references a ciphertext out of range"};
    if (a.slot_lo >= a.slot_hi || a.slot_hi > layout.N)
      return {false, "assignment slot range is empty or exceeds N"};
    per_ct[a.ct].push_back(&a);
  }
  for (uint32_t ct = 0; ct < layout.total_cts; ++ct) {
    auto v = per_ct[ct];
    std::sort(v.begin(), v.end(),
              [](const SlotAssign* x, const SlotAssign* y) { return x->slot_lo < y->slot_lo; });
    uint64_t cursor = 0;
    for (const auto* a : v) {
      if (a->slot_lo != cursor)
        return {false, "ciphertext " + std::to_string(ct) + " has a gap or overlap at slot " +
                           std::to_string(cursor)};
      cursor = a->slot_hi;
    }
    if (cursor != layout.N)
      return {false, "ciphertext " + std::to_string(ct) + " does not cover [0, N)"};
  }
  return {};
}

LayoutCheck check_prior_conservation(const ChainLayout& layout) {
  // Gather prior assignments in (ct, slot) order per urgent input.
  std::vector<std::vector<const SlotAssign*>> per_prior(layout.n_priors);
  for (const auto& a : layout.assigns) {
    if (a.role != SlotRole::prior) continue;
    if (a.owner >= layout.n_priors) return {false, "prior assignment with unknown owner"};
    per_prior[a.owner].push_back(&a);
  }
  for (uint32_t j = 0; j < layout.n_priors; ++j) {
    auto v = per_prior[j];
    std::sort(v.begin(), v.end(), [](const SlotAssign* x, const SlotAssign* y) {
      return x->ct != y->ct ? x->ct < y->ct : x->slot_lo < y->slot_lo;
    });
    if (layout.online) {
      uint64_t cursor = 0;
      for (const auto* a : v) {
        if (a->src_lo != cursor)
          return {false, "urgent input " + std::to_string(j) + " elements not contiguous at " +
                             std::to_string(cursor)};
        if (a->src_hi - a->src_lo != a->slot_hi - a->slot_lo)
          return {false, "urgent input " + std::to_string(j) + " slot/source length mismatch"};
        cursor = a->src_hi;
      }
      if (cursor != layout.prior_len)
        return {false, "urgent input " + std::to_string(j) + " covers " + std::to_string(cursor) +
                           " of " + std::to_string(layout.prior_len) + " elements"};
    } else {
      // Canonical traversal: column chunks ascending, rows ascending within a
      // chunk, columns ascending within a row segment.
      size_t idx = 0;
      uint64_t expect_col = 0;
      while (idx < v.size()) {
        const uint64_t chunk_lo = v[idx]->src_lo;
        const uint64_t chunk_hi = v[idx]->src_hi;
        if (chunk_lo != expect_col)
          return {false, "urgent input " + std::to_string(j) + " chunk starts at column " +
                             std::to_string(chunk_lo) + ", expected " + std::to_string(expect_col)};
        for (uint64_t row = 0; row < layout.prior_rows; ++row, ++idx) {
          if (idx >= v.size())
            return {false, "urgent input " + std::to_string(j) + " chunk truncated at row " +
                               std::to_string(row)};
          const auto* a = v[idx];
          if (a->src_row != row || a->src_lo != chunk_lo || a->src_hi != chunk_hi)
            return {false, "urgent input " + std::to_string(j) + " cell order violation at row " +
                               std::to_string(row)};
          if (a->src_hi - a->src_lo != a->slot_hi - a->slot_lo)
            return {false, "urgent input " + std::to_string(j) + " slot/source length mismatch"};
        }
        expect_col = chunk_hi;
      }
      if (expect_col != layout.prior_cols)
        return {false, "urgent input " + std::to_string(j) + " columns covered to " +
                           std::to_string(expect_col) + " of " + std::to_string(layout.prior_cols)};
    }
  }
  return {};
}

std::vector<std::vector<uint64_t>> prior_fragments(const ChainLayout& layout) {
  std::vector<std::vector<uint64_t>> frags(layout.n_priors);
  for (const auto& a : layout.assigns)
    if (a.role == SlotRole::prior && a.owner < layout.n_priors)
      frags[a.owner].push_back(a.slot_hi - a.slot_lo);
  return frags;
}

void inject_layout_fault(ChainLayout& layout, int kind) {
  for (auto& a : layout.assigns) {
    if (a.role != SlotRole::prior) continue;
    if (kind == 0) {
      // Shift the range down by one slot: collides with the neighbour.
      if (a.slot_lo == 0) continue;
      a.slot_lo -= 1;
      a.slot_hi -= 1;
    } else {
      if (a.slot_hi - a.slot_lo < 2) continue;
      a.slot_hi -= 1;  // shrink: leaves an uncovered slot
    }
    return;
  }
  throw std::logic_error("inject_layout_fault: no prior assignment to corrupt");
}

std::vector<ConvShape> segment_shape(const ConvShape& shape, const SlotParams& params,
                                     uint64_t max_batch) {
  if (max_batch < 1) throw std::invalid_argument("segment_shape: max_batch must be >= 1");
  std::vector<ConvShape> parts;
  uint32_t remaining = shape.Ci;
  while (remaining > 0) {
    uint32_t pick = 0;
    for (uint32_t c = remaining; c >= 1; --c) {
      ConvShape part = shape;
      part.Ci = c;
      if (plan_online(part, params).bsize_display() <= max_batch) {
        pick = c;
        break;
      }
    }
    if (pick == 0)
      throw std::invalid_argument("segment_shape: no channel split satisfies the batch bound");
    ConvShape part = shape;
    part.Ci = pick;
    parts.push_back(part);
    remaining -= pick;
  }
  return parts;
}

ModelBatch model_batch_size(const std::vector<OnlinePlan>& plans) {
  if (plans.empty()) throw std::invalid_argument("model_batch_size: empty plan list");
  ModelBatch r;
  for (size_t i = 0; i < plans.size(); ++i) {
    if (plans[i].recycling()) {
      r.batch = std::max(r.batch, plans[i].per_prior_batch);
    } else {
      r.new_run_blocks.push_back(i);
    }
  }
  return r;
}

}  // namespace qj
