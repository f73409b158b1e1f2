#include "qj/queue_sim.hpp"

#include <algorithm>
#include <bit>
#include <cassert>
#include <deque>
#include <stdexcept>

#include "qj/mpc.hpp"

namespace qj {

namespace {

// Number of lockstep AND layers one sign evaluation runs, mirroring the
// exact call structure of drelu_gmw: w ripple-carry layers, w+1 public-add
// layers, one batched mux layer, w threshold layers, a halving AND tree over
// w planes, and the final combine.
int and_layer_calls(int w) {
  int calls = w + (w + 1) + 1 + w + 1;
  for (int level = w; level > 1; level = level / 2 + level % 2) ++calls;
  return calls;
}

uint64_t clamp_chunks(uint64_t pool, uint32_t priors, uint64_t ppb) {
  const uint64_t floor_done = static_cast<uint64_t>(priors - 1) * ppb;
  if (pool <= floor_done) return 0;
  return std::min(pool - floor_done, ppb);
}

void bump(CostSnapshot& s, Phase ph, CostAttr a, HeOp op, uint64_t v) {
  s.v[static_cast<size_t>(ph)][static_cast<size_t>(a)][static_cast<size_t>(op)] += v;
}

struct Dims {
  uint64_t C = 0, H = 0, W = 0;
  uint64_t len() const { return C * H * W; }
};

}  // namespace

SessionTraffic analytic_traffic(const std::vector<LayerSpec>& model, const SlotParams& slots,
                                uint32_t batch, uint32_t pool, uint32_t priors, bool merge) {
  slots.validate();
  if (batch == 0) throw std::invalid_argument("analytic_traffic: batch must be positive");
  if (pool == 0) pool = batch;
  if (pool < batch) throw std::invalid_argument("analytic_traffic: pool smaller than the batch");

  const Modulus mod(slots.p);
  const uint64_t hdr = kFrameHeaderBytes;
  const uint64_t cw = slots.wire_bytes() + hdr;  // one ciphertext frame on the wire
  const uint64_t B = batch, P = priors, Q = pool;
  const int w = static_cast<int>(std::bit_width(slots.p - 1));
  const uint64_t gates = drelu_and_gates(mod);
  const uint64_t L = static_cast<uint64_t>(and_layer_calls(w));

  if (model.empty() || model.front().kind != LayerSpec::Kind::conv)
    throw std::invalid_argument("analytic_traffic: the first layer must be a convolution");

  SessionTraffic st;
  Dims dims;
  for (uint32_t li = 0; li < model.size(); ++li) {
    const LayerSpec& spec = model[li];
    LayerTraffic lt;
    lt.layer = li;
    lt.kind = spec.kind;

    if (spec.kind == LayerSpec::Kind::meanpool_sum) {
      if (spec.pool_win == 0 || dims.H % spec.pool_win || dims.W % spec.pool_win)
        throw std::invalid_argument("analytic_traffic: pooling window does not tile the grid");
      dims.H /= spec.pool_win;
      dims.W /= spec.pool_win;
      st.layers.push_back(lt);
      continue;
    }
    if (spec.kind == LayerSpec::Kind::batchnorm) {
      st.layers.push_back(lt);
      continue;
    }

    const ConvShape& sh = spec.shape;
    if (li == 0) dims = {sh.Ci, sh.Hi, sh.Wi};
    if (dims.C != sh.Ci || dims.H != sh.Hi || dims.W != sh.Wi)
      throw std::invalid_argument("analytic_traffic: layer shape does not match running dims");

    const OnlinePlan op = plan_online(sh, slots);
    const OfflinePlan fp = plan_offline(sh, slots);
    const uint64_t cpi = op.cts_per_input;
    const uint64_t len_in = op.len;
    const uint64_t len_out = static_cast<uint64_t>(sh.Co) * fp.od.Ho * fp.od.Wo;
    const uint64_t result_cts =
        static_cast<uint64_t>(sh.Co) * (fp.wide_row ? fp.cts_per_row : 1);

    lt.relu = spec.act == ActKind::relu;
    lt.wide_row = fp.wide_row;
    lt.online_recycling = P > 0 && op.s_hat != 0;
    lt.online_dedicated = P > 0 && op.s_hat == 0;
    // Narrow rows recycle through the per-ciphertext s-tilde span; wide rows
    // through the idle tail of each row's last ciphertext.  Either way a
    // nonzero per-prior batch means the urgent mask rides existing
    // ciphertexts and no dedicated pool entries are added.
    lt.offline_recycling = P > 0 && fp.per_prior_batch != 0;
    lt.offline_dedicated = P > 0 && !lt.offline_recycling;
    if (lt.offline_recycling)
      lt.prior_offline_complete =
          clamp_chunks(Q, P, fp.per_prior_batch) == fp.per_prior_batch;

    // Offline: per pooled entry, n mask ciphertexts up and Co result
    // ciphertexts down; dedicated urgent entries replicate the pattern.
    const uint64_t entries_p = lt.offline_dedicated ? P : 0;
    lt.offline_inqueue_bytes = Q * (fp.n + result_cts) * cw;
    lt.offline_prior_bytes = entries_p * (fp.n + result_cts) * cw;
    lt.offline_runs = 2.0 * static_cast<double>(Q + entries_p);
    bump(lt.he, Phase::offline, CostAttr::inqueue, HeOp::enc, Q * fp.n);
    bump(lt.he, Phase::offline, CostAttr::inqueue, HeOp::cmult, Q * sh.Co * fp.n);
    bump(lt.he, Phase::offline, CostAttr::inqueue, HeOp::add, Q * sh.Co * fp.n);
    bump(lt.he, Phase::offline, CostAttr::inqueue, HeOp::dec, Q * result_cts);
    if (entries_p) {
      bump(lt.he, Phase::offline, CostAttr::prior, HeOp::enc, entries_p * fp.n);
      bump(lt.he, Phase::offline, CostAttr::prior, HeOp::cmult, entries_p * sh.Co * fp.n);
      bump(lt.he, Phase::offline, CostAttr::prior, HeOp::add, entries_p * sh.Co * fp.n);
      bump(lt.he, Phase::offline, CostAttr::prior, HeOp::dec, entries_p * result_cts);
    }

    if (lt.relu) {
      // Server-encrypted activation ciphertexts, two per online unit ct.
      lt.offline_inqueue_bytes += B * 2 * cpi * cw;
      bump(lt.he, Phase::offline, CostAttr::inqueue, HeOp::enc, 2 * B * cpi);
      const uint64_t units_p = lt.online_dedicated ? P : 0;
      if (units_p) {
        lt.offline_prior_bytes += units_p * 2 * cpi * cw;
        bump(lt.he, Phase::offline, CostAttr::prior, HeOp::enc, 2 * units_p * cpi);
      }

      // Sign protocol over the concatenated extended batch: one frame per
      // party per AND layer (total payload 2*8*gates*words per direction)
      // plus the re-randomization frame.
      const uint64_t ext_total = (B + units_p) * cpi * slots.N;
      const uint64_t nw = bit_words(ext_total);
      lt.online_common_bytes = 2 * (16 * gates * nw + hdr * L) + (nw * 8 + hdr);

      // Client t ciphertexts up, masked output shares down.
      lt.online_inqueue_bytes = B * cpi * cw + B * (hdr + len_out * 8);
      lt.online_prior_bytes = units_p * cpi * cw;
      lt.online_runs = 2.0 * static_cast<double>(L) + 2.0;
      bump(lt.he, Phase::online, CostAttr::inqueue, HeOp::cmult, 2 * B * cpi);
      bump(lt.he, Phase::online, CostAttr::inqueue, HeOp::add, 2 * B * cpi);
      bump(lt.he, Phase::online, CostAttr::inqueue, HeOp::dec, B * cpi);
      if (units_p) {
        bump(lt.he, Phase::online, CostAttr::prior, HeOp::cmult, 2 * units_p * cpi);
        bump(lt.he, Phase::online, CostAttr::prior, HeOp::add, 2 * units_p * cpi);
        bump(lt.he, Phase::online, CostAttr::prior, HeOp::dec, units_p * cpi);
      }
    } else {
      // Identity: plaintext masked activations up, output shares down; the
      // urgent activation always crosses as its own plaintext frames.
      lt.online_inqueue_bytes = B * (hdr + len_in * 8) + B * (hdr + len_out * 8);
      lt.online_prior_bytes = P * (hdr + len_in * 8);
      lt.online_runs = 2.0;
    }

    // The urgent output share: merged into the last in-queue frame (no
    // header, no extra half round) or one frame per urgent input.
    if (P > 0) {
      if (merge) {
        lt.online_prior_bytes += P * len_out * 8;
      } else {
        lt.online_prior_bytes += P * (hdr + len_out * 8);
        lt.prior_half_rounds = 0.5 * static_cast<double>(P);
      }
    }

    dims = {sh.Co, fp.od.Ho, fp.od.Wo};
    st.layers.push_back(lt);
  }

  for (const auto& lt : st.layers) {
    st.offline_bytes += lt.offline_inqueue_bytes + lt.offline_prior_bytes;
    st.online_bytes += lt.online_inqueue_bytes + lt.online_common_bytes;
    st.prior_online_bytes += lt.online_prior_bytes;
    st.offline_rounds += 0.5 * lt.offline_runs;
    st.online_rounds += 0.5 * lt.online_runs;
    st.prior_half_rounds += lt.prior_half_rounds;
    for (int ph = 0; ph < 2; ++ph)
      for (int a = 0; a < 3; ++a)
        for (int o = 0; o < 6; ++o) st.he.v[ph][a][o] += lt.he.v[ph][a][o];
  }
  return st;
}

QueuePolicy parse_policy(const std::string& name) {
  if (name == "batch_expand" || name == "batch-expand") return QueuePolicy::batch_expand;
  if (name == "drop_out" || name == "drop-out") return QueuePolicy::drop_out;
  if (name == "piggyback") return QueuePolicy::piggyback;
  throw std::invalid_argument("unknown queue policy: " + name);
}

std::string to_string(QueuePolicy p) {
  switch (p) {
    case QueuePolicy::batch_expand: return "batch_expand";
    case QueuePolicy::drop_out: return "drop_out";
    case QueuePolicy::piggyback: return "piggyback";
  }
  return "?";
}

BatchTimeModel batch_time_model(const std::vector<LayerSpec>& model, const SlotParams& slots,
                                bool merge, const NetProfile& prof) {
  const auto t1 = analytic_traffic(model, slots, 1, 1, 0, merge);
  const auto t2 = analytic_traffic(model, slots, 2, 2, 0, merge);
  const auto tp = analytic_traffic(model, slots, 1, 1, 1, merge);
  const double s1 = model_latency_s(t1.online_bytes, t1.online_rounds, prof);
  const double s2 = model_latency_s(t2.online_bytes, t2.online_rounds, prof);
  BatchTimeModel tm;
  tm.per_input_s = s2 - s1;
  tm.fixed_s = s1 - tm.per_input_s;
  tm.prior_extra_s = model_latency_s(tp.prior_online_bytes, tp.prior_half_rounds, prof);
  return tm;
}

std::vector<Arrival> strip_priors(const std::vector<Arrival>& arrivals) {
  std::vector<Arrival> out;
  for (const auto& a : arrivals)
    if (!a.prior) out.push_back(a);
  return out;
}

SimReport simulate_queue(std::vector<Arrival> arrivals, QueuePolicy policy,
                         const BatchTimeModel& tm, uint32_t batch) {
  if (batch == 0) throw std::invalid_argument("simulate_queue: batch must be positive");
  std::stable_sort(arrivals.begin(), arrivals.end(),
                   [](const Arrival& a, const Arrival& b) { return a.t < b.t; });
  uint32_t nq = 0, np = 0;
  for (auto& a : arrivals)
    if (a.id.empty()) a.id = (a.prior ? "u" : "q") + std::to_string(a.prior ? np++ : nq++);

  struct Item {
    size_t idx;
    double ready;
  };
  std::deque<Item> inqueue;   // arrived or future, in order; ready = arrival time
  std::deque<Item> priors;
  for (size_t i = 0; i < arrivals.size(); ++i)
    (arrivals[i].prior ? priors : inqueue).push_back({i, arrivals[i].t});

  SimReport rep;
  rep.rows.resize(arrivals.size());
  for (size_t i = 0; i < arrivals.size(); ++i)
    rep.rows[i] = {arrivals[i].id, arrivals[i].prior, arrivals[i].t, 0, 0};

  double server_free = 0;
  while (!inqueue.empty() || !priors.empty()) {
    // Members of the next batch: the first up-to-`batch` waiting in-queue
    // inputs; the batch starts when the server is free and they have all
    // arrived.  A trailing partial batch runs smaller.
    const size_t take = std::min<size_t>(batch, inqueue.size());
    double ready = 0;
    for (size_t k = 0; k < take; ++k) ready = std::max(ready, inqueue[k].ready);
    double start = std::max(server_free, ready);
    if (take == 0) {
      // Only urgent inputs remain: they run as their own batch.
      start = std::max(server_free, priors.front().ready);
    }

    std::vector<size_t> members;
    for (size_t k = 0; k < take; ++k) members.push_back(inqueue[k].idx);
    inqueue.erase(inqueue.begin(), inqueue.begin() + static_cast<long>(take));

    // Urgent inputs that arrived by the start of this batch.
    std::vector<size_t> urgent;
    while (!priors.empty() && priors.front().ready <= start) {
      urgent.push_back(priors.front().idx);
      priors.pop_front();
    }
    if (take == 0 && urgent.empty()) {
      // Nothing has arrived yet; jump to the next arrival.
      server_free = std::max(server_free, std::min(inqueue.empty() ? 1e300 : inqueue.front().ready,
                                                   priors.empty() ? 1e300 : priors.front().ready));
      continue;
    }

    double finish = 0;
    switch (policy) {
      case QueuePolicy::piggyback: {
        // Urgent inputs ride the batch's idle slots; everyone absorbs only
        // the urgent share-frame traffic.
        const auto n = static_cast<uint32_t>(members.size());
        if (n == 0)
          finish = start + tm.seconds(static_cast<uint32_t>(urgent.size()));
        else
          finish = start + tm.seconds(n) +
                   static_cast<double>(urgent.size()) * tm.prior_extra_s;
        break;
      }
      case QueuePolicy::drop_out: {
        // Each urgent input displaces the last in-queue member; displaced
        // inputs re-queue at the head and wait for the next batch.
        std::vector<size_t> displaced;
        for (size_t j = 0; j < urgent.size() && !members.empty(); ++j) {
          displaced.push_back(members.back());
          members.pop_back();
        }
        for (auto it = displaced.rbegin(); it != displaced.rend(); ++it)
          inqueue.push_front({*it, start});
        const auto n = static_cast<uint32_t>(members.size() + urgent.size());
        finish = start + tm.seconds(n);
        break;
      }
      case QueuePolicy::batch_expand: {
        // Urgent inputs join, growing the batch; an urgent arrival mid-run
        // aborts the batch, which restarts with it included.
        auto n = static_cast<uint32_t>(members.size() + urgent.size());
        finish = start + tm.seconds(n);
        while (!priors.empty() && priors.front().ready < finish) {
          const Item late = priors.front();
          priors.pop_front();
          urgent.push_back(late.idx);
          n += 1;
          finish = late.ready + tm.seconds(n);
        }
        break;
      }
    }

    for (size_t idx : members) {
      rep.rows[idx].start = start;
      rep.rows[idx].finish = finish;
    }
    for (size_t idx : urgent) {
      rep.rows[idx].start = start;
      rep.rows[idx].finish = finish;
    }
    server_free = finish;
  }

  double sum_q = 0, sum_p = 0;
  size_t cnt_q = 0, cnt_p = 0;
  for (const auto& r : rep.rows) {
    rep.makespan = std::max(rep.makespan, r.finish);
    (r.prior ? sum_p : sum_q) += r.wait();
    (r.prior ? cnt_p : cnt_q) += 1;
  }
  rep.mean_inqueue_wait = cnt_q ? sum_q / static_cast<double>(cnt_q) : 0;
  rep.mean_prior_wait = cnt_p ? sum_p / static_cast<double>(cnt_p) : 0;
  return rep;
}

}  // namespace qj
