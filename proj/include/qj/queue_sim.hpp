// Analytic traffic model and queue-jumping simulator.
//
// analytic_traffic mirrors the engine's frame schedule exactly (dealer-
// assisted sign protocol; the OT variant adds offline transfer frames this
// model deliberately excludes), so per-layer bytes, rounds, and HE counts
// can be computed for arbitrarily large models without running a session.
// The cross-check against a real session transcript lives in the tests.
// Wide rows (Ho*Wo > N), which the runtime rejects, are modeled after the
// published layout: the urgent mask recycles each row's idle tail slots.
//
// simulate_queue derives per-input waiting times under the three batch
// policies for urgent arrivals:
//   - batch_expand: urgent inputs join the batch, which is recomputed at the
//     larger size; an urgent arrival mid-run aborts and restarts the batch;
//   - drop_out: each urgent input displaces the last in-queue member of the
//     next batch to start, and the displaced input re-queues at the head;
//   - piggyback: urgent inputs ride the next batch inside its idle slots,
//     adding only their share-frame traffic (and the published half round
//     when the share is not merged).
// Offline precompute is input-independent pooled inventory and is excluded
// from the waiting model.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qj/he.hpp"
#include "qj/plan.hpp"
#include "qj/protocol.hpp"
#include "qj/transport.hpp"

namespace qj {

// Per-layer analytic traffic and operation counts.
struct LayerTraffic {
  uint32_t layer = 0;
  LayerSpec::Kind kind = LayerSpec::Kind::conv;
  bool relu = false;
  bool online_recycling = false, offline_recycling = false;
  bool online_dedicated = false, offline_dedicated = false;
  bool wide_row = false;
  bool prior_offline_complete = true;  // pool covers the urgent precompute

  uint64_t offline_inqueue_bytes = 0, offline_prior_bytes = 0;
  uint64_t online_inqueue_bytes = 0, online_common_bytes = 0, online_prior_bytes = 0;
  double offline_runs = 0, online_runs = 0;  // same-direction frame runs
  double prior_half_rounds = 0;  // 0.5 per separate online urgent frame
  CostSnapshot he;
};

struct SessionTraffic {
  std::vector<LayerTraffic> layers;
  uint64_t offline_bytes = 0;       // both attrs
  uint64_t online_bytes = 0;        // in-queue + sign-protocol traffic
  uint64_t prior_online_bytes = 0;  // added online traffic of the urgent inputs
  double offline_rounds = 0, online_rounds = 0;
  double prior_half_rounds = 0;
  CostSnapshot he;
};

SessionTraffic analytic_traffic(const std::vector<LayerSpec>& model, const SlotParams& slots,
                                uint32_t batch, uint32_t pool, uint32_t priors, bool merge);

// ---------------------------------------------------------------------------
// Queue simulation.

enum class QueuePolicy : uint8_t { batch_expand, drop_out, piggyback };
QueuePolicy parse_policy(const std::string& name);
std::string to_string(QueuePolicy p);

struct Arrival {
  double t = 0;
  bool prior = false;
  std::string id;  // auto-assigned when empty
};

// Affine online batch-time model under one network profile:
// seconds(n) = fixed + n * per_input; urgent piggyback extra per input is
// its share-frame traffic plus the half round.
struct BatchTimeModel {
  double fixed_s = 0;
  double per_input_s = 0;
  double prior_extra_s = 0;

  double seconds(uint32_t n) const { return n == 0 ? 0.0 : fixed_s + n * per_input_s; }
};
BatchTimeModel batch_time_model(const std::vector<LayerSpec>& model, const SlotParams& slots,
                                bool merge, const NetProfile& prof);

struct SimRow {
  std::string id;
  bool prior = false;
  double arrive = 0, start = 0, finish = 0;
  double wait() const { return finish - arrive; }
};

struct SimReport {
  std::vector<SimRow> rows;  // arrival order
  double makespan = 0;
  double mean_inqueue_wait = 0, mean_prior_wait = 0;
};

SimReport simulate_queue(std::vector<Arrival> arrivals, QueuePolicy policy,
                         const BatchTimeModel& tm, uint32_t batch);

// Same arrivals with the urgent inputs removed (the no-jumping baseline).
std::vector<Arrival> strip_priors(const std::vector<Arrival>& arrivals);

}  // namespace qj
