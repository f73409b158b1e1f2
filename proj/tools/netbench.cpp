// netbench: cost and geometry workbench for the slot-recycling engine.
//
// Subcommands (all emit CSV by default, JSON with --out json):
//   plan       slot-plan geometry for conv rows (defaults to the built-in
//              reference rows).  Columns: shape,N,len,cts_per_input,s_hat,
//              online_bsize,rows,wide_row,rows_per_ct,n,s_tilde,wide_idle,
//              offline_bsize.
//   baseline   published cost models: the asymptotic complexity table for
//              all schemes and the exact added-cost table for the schemes
//              with a quantitative row.
//   block      one conv/activation chain as a real two-party session
//              (default) or through the analytic traffic model (--analytic).
//              Reports per-layer traffic, HE counts, modeled latency, and
//              the delta an urgent input adds over a no-urgent run.
//   model      cost a JSON model config through the analytic model;
//              chain configs can also be executed for real with --run.
//   queue-sim  waiting times for an arrival trace under the three urgent
//              policies (batch_expand, drop_out, piggyback).
//   verify     self-checks: plan pins, random layout sweep (optionally with
//              an injected fault that must be caught), sign-protocol
//              correctness (dealer and OT), an end-to-end session against
//              the plaintext oracle, and a share-uniformity smoke test.
//
// Latency figures are always modeled from bytes and rounds under a named
// network profile, never measured wall-clock times.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qj/baseline.hpp"
#include "qj/modelcfg.hpp"
#include "qj/mpc.hpp"
#include "qj/plan.hpp"
#include "qj/protocol.hpp"
#include "qj/queue_sim.hpp"
#include "qj/ring.hpp"
#include "qj/rng.hpp"
#include "qj/transport.hpp"

namespace {

using nlohmann::ordered_json;
using namespace qj;

// ---------------------------------------------------------------------------
// Output: every subcommand builds named tables (arrays of flat objects) and
// emits them as sections of CSV or as one JSON object.

using Table = std::pair<std::string, ordered_json>;

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

std::string num_str(double v) {
  if (std::floor(v) == v && std::abs(v) < 1e15) return std::to_string(static_cast<long long>(v));
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

std::string csv_cell(const ordered_json& v) {
  if (v.is_null()) return "";
  if (v.is_string()) return csv_escape(v.get<std::string>());
  if (v.is_boolean()) return v.get<bool>() ? "1" : "0";
  if (v.is_number_float()) return num_str(v.get<double>());
  return v.dump();
}

void emit(const std::vector<Table>& tables, const std::string& mode) {
  if (mode == "json") {
    ordered_json root;
    for (const auto& [name, tbl] : tables) root[name] = tbl;
    std::cout << root.dump(2) << "\n";
    return;
  }
  bool first = true;
  for (const auto& [name, tbl] : tables) {
    if (!first) std::cout << "\n";
    first = false;
    std::cout << "# " << name << "\n";
    if (tbl.empty()) continue;
    bool c0 = true;
    for (auto it = tbl.front().begin(); it != tbl.front().end(); ++it) {
      if (!c0) std::cout << ",";
      c0 = false;
      std::cout << it.key();
    }
    std::cout << "\n";
    for (const auto& row : tbl) {
      c0 = true;
      for (auto it = row.begin(); it != row.end(); ++it) {
        if (!c0) std::cout << ",";
        c0 = false;
        std::cout << csv_cell(it.value());
      }
      std::cout << "\n";
    }
  }
}

// ---------------------------------------------------------------------------
// Shared helpers.

ConvShape parse_shape(const std::string& text) {
  std::vector<uint32_t> v;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) v.push_back(static_cast<uint32_t>(std::stoul(part)));
  if (v.size() != 4) throw CLI::ValidationError("--shape", "expected Hi,Ci,fh,Co");
  return ConvShape{.Ci = v[1], .Hi = v[0], .Wi = v[0], .Co = v[3],
                   .Hf = v[2], .Wf = v[2], .stride = 1, .pad = Padding::same};
}

std::string shape_str(const ConvShape& s) {
  std::ostringstream os;
  os << s.Hi << "x" << s.Ci << "x" << s.Hf << "x" << s.Co;
  return os.str();
}

const char* kind_name(LayerSpec::Kind k) {
  switch (k) {
    case LayerSpec::Kind::conv: return "conv";
    case LayerSpec::Kind::meanpool_sum: return "meanpool_sum";
    case LayerSpec::Kind::batchnorm: return "batchnorm";
  }
  return "?";
}

// Random additive-shared inputs for a model whose first layer is a conv.
SessionInputs random_inputs(const std::vector<LayerSpec>& model, const SlotParams& sp,
                            uint32_t batch, uint32_t priors, uint64_t seed) {
  const ConvShape& s = model.front().shape;
  const size_t len = static_cast<size_t>(s.Ci) * s.Hi * s.Wi;
  const Modulus mod(sp.p);
  SeededRng rng(derive_seed(seed, 0xda7a));
  SessionInputs in;
  auto fill = [&](std::vector<std::vector<uint64_t>>& a, std::vector<std::vector<uint64_t>>& b,
                  uint32_t n) {
    for (uint32_t i = 0; i < n; ++i) {
      std::vector<uint64_t> x(len), s0(len), s1(len);
      rng.fill_below(x, mod.p);
      share_vec(rng, mod, x, s0, s1);
      a.push_back(std::move(s0));
      b.push_back(std::move(s1));
    }
  };
  fill(in.inqueue0, in.inqueue1, batch);
  fill(in.prior0, in.prior1, priors);
  return in;
}

// Pool size that fully covers every recycling conv layer's offline chunks
// for `priors` urgent inputs (and never goes below the online batch).
uint32_t chain_pool(const std::vector<LayerSpec>& model, const SlotParams& sp, uint32_t batch,
                    uint32_t priors) {
  uint64_t pool = batch;
  for (const auto& l : model) {
    if (l.kind != LayerSpec::Kind::conv) continue;
    auto off = plan_offline(l.shape, sp);
    if (off.recycling()) pool = std::max<uint64_t>(pool, off.per_prior_batch * std::max(1u, priors));
  }
  return static_cast<uint32_t>(pool);
}

const char* path_name(bool recycled, bool dedicated) {
  return recycled ? "recycled" : (dedicated ? "dedicated" : "-");
}

ordered_json layer_rows(const std::vector<LayerTraffic>& layers) {
  ordered_json rows = ordered_json::array();
  for (const auto& lt : layers) {
    rows.push_back({{"layer", lt.layer},
                    {"kind", kind_name(lt.kind)},
                    {"relu", lt.relu},
                    {"online_path", path_name(lt.online_recycling, lt.online_dedicated)},
                    {"offline_path", path_name(lt.offline_recycling, lt.offline_dedicated)},
                    {"wide_row", lt.wide_row},
                    {"prior_offline_complete", lt.prior_offline_complete},
                    {"offline_inqueue_bytes", lt.offline_inqueue_bytes},
                    {"offline_prior_bytes", lt.offline_prior_bytes},
                    {"online_inqueue_bytes", lt.online_inqueue_bytes},
                    {"online_common_bytes", lt.online_common_bytes},
                    {"online_prior_bytes", lt.online_prior_bytes},
                    {"offline_runs", lt.offline_runs},
                    {"online_runs", lt.online_runs},
                    {"prior_half_rounds", lt.prior_half_rounds}});
  }
  return rows;
}

ordered_json he_rows(const CostSnapshot& he) {
  ordered_json rows = ordered_json::array();
  for (int ph = 0; ph < 2; ++ph)
    for (int a = 0; a < 3; ++a)
      for (int op = 0; op < 6; ++op) {
        const uint64_t v = he.v[ph][a][op];
        if (!v) continue;
        rows.push_back({{"phase", to_string(static_cast<Phase>(ph))},
                        {"attr", to_string(static_cast<CostAttr>(a))},
                        {"op", to_string(static_cast<HeOp>(op))},
                        {"count", v}});
      }
  return rows;
}

struct TrafficTotals {
  uint64_t offline_bytes = 0, online_bytes = 0, prior_online_bytes = 0;
  double offline_rounds = 0, online_rounds = 0, prior_half_rounds = 0;
};

TrafficTotals totals_of(const SessionTraffic& st) {
  return {st.offline_bytes, st.online_bytes, st.prior_online_bytes,
          st.offline_rounds, st.online_rounds, st.prior_half_rounds};
}

TrafficTotals totals_of(const SessionResult& res) {
  const Transcript& t = res.transcript;
  TrafficTotals out;
  out.offline_bytes = t.bytes(Phase::offline, CostAttr::inqueue) +
                      t.bytes(Phase::offline, CostAttr::prior) +
                      t.bytes(Phase::offline, CostAttr::common_drelu);
  out.online_bytes = t.bytes(Phase::online, CostAttr::inqueue) +
                     t.bytes(Phase::online, CostAttr::common_drelu);
  out.prior_online_bytes = t.bytes(Phase::online, CostAttr::prior);
  auto phase_is = [](Phase ph) {
    return [ph](const FrameMeta& m) { return m.cat.phase == ph; };
  };
  out.offline_rounds = rounds(t, phase_is(Phase::offline));
  out.online_rounds = rounds(t, phase_is(Phase::online));
  uint64_t sep = 0;
  for (const auto& b : res.blocks) sep += b.separate_prior_frames;
  out.prior_half_rounds = 0.5 * static_cast<double>(sep);
  return out;
}

// Single-row summary table; `base` (the no-urgent run) adds delta columns.
ordered_json summary_row(const TrafficTotals& with, const TrafficTotals* base,
                         const NetProfile& prof) {
  const double online_lat = model_latency_s(with.online_bytes + with.prior_online_bytes,
                                            with.online_rounds + with.prior_half_rounds, prof);
  ordered_json row{{"offline_bytes", with.offline_bytes},
                   {"online_bytes", with.online_bytes},
                   {"prior_online_bytes", with.prior_online_bytes},
                   {"offline_rounds", with.offline_rounds},
                   {"online_rounds", with.online_rounds},
                   {"prior_half_rounds", with.prior_half_rounds},
                   {"net", prof.name},
                   {"offline_latency_s", model_latency_s(with.offline_bytes, with.offline_rounds, prof)},
                   {"online_latency_s", online_lat}};
  if (base) {
    const double base_lat = model_latency_s(base->online_bytes + base->prior_online_bytes,
                                            base->online_rounds + base->prior_half_rounds, prof);
    row["added_online_bytes"] =
        with.online_bytes + with.prior_online_bytes - base->online_bytes - base->prior_online_bytes;
    row["added_online_latency_s"] = online_lat - base_lat;
  }
  return row;
}

// ---------------------------------------------------------------------------
// plan

// Reference conv rows (ResNet-style 56..7 grids, the wide/narrow transition
// rows, and the AlexNet-style 27/13 grids).
const std::vector<std::array<uint32_t, 4>> kDefaultRows = {
    {56, 64, 3, 64},   {28, 128, 3, 128}, {14, 256, 3, 256}, {7, 512, 3, 512},
    {112, 64, 3, 128}, {56, 128, 3, 256}, {56, 256, 3, 256}, {28, 256, 3, 512},
    {28, 512, 3, 512}, {14, 512, 3, 512}, {27, 96, 5, 256},  {13, 256, 3, 384},
    {13, 384, 3, 384}, {13, 384, 3, 256},
};

int cmd_plan(const std::vector<std::string>& shapes, uint32_t N, uint64_t p,
             const std::string& out) {
  SlotParams sp{.N = N, .p = p ? p : default_modulus(N)};
  std::vector<ConvShape> rows;
  if (shapes.empty()) {
    for (const auto& r : kDefaultRows)
      rows.push_back(parse_shape(std::to_string(r[0]) + "," + std::to_string(r[1]) + "," +
                                 std::to_string(r[2]) + "," + std::to_string(r[3])));
  } else {
    for (const auto& s : shapes) rows.push_back(parse_shape(s));
  }
  ordered_json tbl = ordered_json::array();
  for (const auto& s : rows) {
    auto on = plan_online(s, sp);
    auto off = plan_offline(s, sp);
    tbl.push_back({{"shape", shape_str(s)},
                   {"N", N},
                   {"len", on.len},
                   {"cts_per_input", on.cts_per_input},
                   {"s_hat", on.s_hat},
                   {"online_bsize", on.bsize_display()},
                   {"rows", off.rows},
                   {"wide_row", off.wide_row},
                   {"rows_per_ct", off.rows_per_ct},
                   {"n", off.n},
                   {"s_tilde", off.s_tilde},
                   {"wide_idle", off.wide_idle},
                   {"offline_bsize", off.bsize_display()}});
  }
  emit({{"plan", tbl}}, out);
  return 0;
}

// ---------------------------------------------------------------------------
// baseline

std::string round_text(const ComplexityRow& r) {
  std::string t = num_str(r.round_base);
  return r.round_suffix.empty() ? t : t + r.round_suffix;
}

int cmd_baseline(const std::string& shape_text, uint32_t N, const std::string& out) {
  const ConvShape shape = parse_shape(shape_text);
  const BaselineDims d = baseline_dims(shape, N);
  ordered_json cx = ordered_json::array();
  for (Scheme s : all_schemes()) {
    auto r = complexity_row(s, d);
    cx.push_back({{"scheme", to_string(s)},
                  {"rot", r.rot.text()},
                  {"extr", r.extr.text()},
                  {"mult", r.mult.text()},
                  {"dec", r.dec.text()},
                  {"cts", r.cts.text()},
                  {"rounds", round_text(r)}});
  }
  ordered_json ac = ordered_json::array();
  for (Scheme s : all_schemes()) {
    if (!has_added_cost_row(s)) continue;
    auto r = added_cost_row(s, d);
    ac.push_back({{"scheme", to_string(s)},
                  {"mux", r.needs_mux},
                  {"off_enc", r.off_enc.text()},
                  {"off_cmult", r.off_cmult.text()},
                  {"off_dec", r.off_dec.text()},
                  {"off_add", r.off_add.text()},
                  {"on_rot", r.on_rot.text()},
                  {"on_enc", r.on_enc.text()},
                  {"on_cmult", r.on_cmult.text()},
                  {"on_dec", r.on_dec.text()},
                  {"on_add", r.on_add.text()},
                  {"on_extr", r.on_extr.text()}});
  }
  ordered_json geo = ordered_json::array();
  geo.push_back({{"shape", shape_str(shape)}, {"N", N}, {"Cn", d.cn()},
                 {"Ho", d.Ho}, {"Wo", d.Wo}});
  emit({{"geometry", geo}, {"complexity", cx}, {"added_cost", ac}}, out);
  return 0;
}

// ---------------------------------------------------------------------------
// block

struct BlockOpts {
  std::string shape_text = "56,64,3,64";
  uint32_t N = 8192;
  uint64_t p = 0;
  uint32_t batch = 0, pool = 0, priors = 1;
  bool merge = false, analytic = false, tcp = false;
  std::string drelu = "dealer";
  std::string net = "wan1";
  uint64_t seed = 1;
  uint32_t parallel = 0;
  std::string record_path, replay_path;
  std::string out = "csv";
};

int cmd_block(const BlockOpts& o) {
  const ConvShape shape = parse_shape(o.shape_text);
  SlotParams sp{.N = o.N, .p = o.p ? o.p : default_modulus(o.N)};
  auto on = plan_online(shape, sp);
  const uint32_t batch = o.batch ? o.batch : static_cast<uint32_t>(on.bsize_display());
  const uint32_t pool = o.pool ? o.pool : batch;

  // One relu block; weights sampled from the seed.
  ModelConfig mc;
  mc.name = "block";
  mc.slots = sp;
  mc.layers.push_back({LayerSpec::Kind::conv, shape, ActKind::relu, 2, 1});
  const auto model = build_layers(mc, o.seed);
  const NetProfile prof = profile_by_name(o.net);

  ordered_json cfg_tbl = ordered_json::array();
  cfg_tbl.push_back({{"shape", shape_str(shape)},
                     {"N", o.N},
                     {"p", sp.p},
                     {"batch", batch},
                     {"pool", pool},
                     {"priors", o.priors},
                     {"merge_final_share", o.merge},
                     {"mode", o.analytic ? "analytic" : "measured"},
                     {"drelu", o.drelu},
                     {"seed", o.seed}});

  std::vector<Table> tables{{"config", cfg_tbl}};

  if (o.analytic) {
    auto with = analytic_traffic(model, sp, batch, pool, o.priors, o.merge);
    auto base = analytic_traffic(model, sp, batch, pool, 0, o.merge);
    auto tw = totals_of(with), tb = totals_of(base);
    tables.push_back({"layers", layer_rows(with.layers)});
    tables.push_back({"summary", ordered_json::array({summary_row(tw, &tb, prof)})});
    tables.push_back({"he", he_rows(with.he)});
    emit(tables, o.out);
    return 0;
  }

  SessionConfig sc;
  sc.slots = sp;
  sc.seed = o.seed;
  sc.n_inqueue = batch;
  sc.n_offline_pool = pool;
  sc.n_priors = o.priors;
  sc.merge_final_share = o.merge;
  sc.drelu_mode = o.drelu == "ot" ? DreluMode::ot : DreluMode::dealer;
  sc.transport = o.tcp ? TransportKind::tcp : TransportKind::inproc;

  if (o.parallel > 1) {
    // Thread-safety demonstration: identical sessions run concurrently must
    // produce byte-identical transcripts.
    std::vector<uint64_t> bytes(o.parallel, 0);
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errs(o.parallel);
    for (uint32_t i = 0; i < o.parallel; ++i)
      workers.emplace_back([&, i] {
        try {
          auto inp = random_inputs(model, sp, batch, o.priors, o.seed);
          bytes[i] = run_session(sc, model, inp).transcript.total_bytes();
        } catch (...) {
          errs[i] = std::current_exception();
        }
      });
    for (auto& w : workers) w.join();
    for (auto& e : errs)
      if (e) std::rethrow_exception(e);
    const bool identical = std::all_of(bytes.begin(), bytes.end(),
                                       [&](uint64_t b) { return b == bytes[0]; });
    ordered_json par = ordered_json::array();
    par.push_back({{"sessions", o.parallel}, {"total_bytes", bytes[0]}, {"identical", identical}});
    emit({{"parallel", par}}, o.out);
    return identical ? 0 : 1;
  }

  // Baseline run without urgent inputs, then the run under test.
  SessionConfig base_cfg = sc;
  base_cfg.n_priors = 0;
  auto base_inp = random_inputs(model, sp, batch, 0, o.seed);
  auto base_res = run_session(base_cfg, model, base_inp);

  SessionRecord rec;
  std::unique_ptr<FrameTap> tap;
  if (!o.record_path.empty()) {
    rec.config_digest = session_config_digest(sc, model);
    rec.seed = o.seed;
    tap = std::make_unique<RecordingTap>(rec);
  }
  SessionRecord loaded;
  std::unique_ptr<ReplayCheckTap> replay;
  if (!o.replay_path.empty()) {
    loaded = SessionRecord::load(o.replay_path);
    if (loaded.config_digest != session_config_digest(sc, model))
      throw std::runtime_error("replay record was made under a different config");
    replay = std::make_unique<ReplayCheckTap>(loaded);
    tap.reset();
  }

  auto inp = random_inputs(model, sp, batch, o.priors, o.seed);
  auto res = run_session(sc, model, inp, replay ? static_cast<FrameTap*>(replay.get()) : tap.get());

  if (!o.record_path.empty() && !replay) rec.save(o.record_path);
  if (replay && !replay->complete())
    throw std::runtime_error("replay mismatch: " + (replay->mismatch().empty()
                                                        ? "record has extra frames"
                                                        : replay->mismatch()));

  auto tw = totals_of(res), tb = totals_of(base_res);
  ordered_json sum = summary_row(tw, &tb, prof);
  sum["gmw_triple_words"] = res.gmw_triple_words;
  sum["base_ots"] = res.base_ots;
  // Single recycled relu block: the closed-form HE count must match exactly.
  auto off = plan_offline(shape, sp);
  if (!off.wide_row && on.recycling()) {
    CostSnapshot want = expected_relu_block_counts(shape, sp, pool, batch);
    sum["matches_closed_form"] = res.he_delta == want;
    sum["prior_he_total"] = res.he_delta.prior_total();
  }
  if (replay) sum["replay_matched_frames"] = replay->matched();

  ordered_json blocks = ordered_json::array();
  for (const auto& b : res.blocks)
    blocks.push_back({{"layer", b.layer},
                      {"kind", kind_name(b.kind)},
                      {"relu", b.relu},
                      {"online_path", path_name(b.online_recycling, b.online_dedicated_prior)},
                      {"offline_path", path_name(b.offline_recycling, b.offline_dedicated_prior)},
                      {"prior_chunks_needed", b.prior_chunks_needed},
                      {"prior_chunks_done", b.prior_chunks_done},
                      {"plain_convs_inqueue", b.plain_convs_inqueue},
                      {"plain_convs_prior", b.plain_convs_prior},
                      {"separate_prior_frames", b.separate_prior_frames}});

  tables.push_back({"summary", ordered_json::array({sum})});
  tables.push_back({"blocks", blocks});
  tables.push_back({"he", he_rows(res.he_delta)});
  emit(tables, o.out);
  return 0;
}

// ---------------------------------------------------------------------------
// model

struct ModelOpts {
  std::string config_path;
  uint32_t batch = 0, pool = 0, priors = 1;
  bool merge = false, run = false;
  std::string net = "wan1";
  uint64_t seed = 1;
  std::string out = "csv";
};

int cmd_model(const ModelOpts& o) {
  const ModelConfig cfg = load_model_config(o.config_path);
  const SlotParams sp = cfg.slots;
  const uint32_t batch = o.batch ? o.batch : cfg.batch_hint;
  const NetProfile prof = profile_by_name(o.net);

  ordered_json cfg_tbl = ordered_json::array();
  cfg_tbl.push_back({{"name", cfg.name},
                     {"chain", cfg.chain},
                     {"N", sp.N},
                     {"p", sp.p},
                     {"batch", batch},
                     {"priors", o.priors},
                     {"merge_final_share", o.merge},
                     {"net", prof.name}});
  std::vector<Table> tables{{"config", cfg_tbl}};

  if (cfg.chain) {
    const auto model = build_layers(cfg, o.seed);
    const uint32_t pool = o.pool ? o.pool : chain_pool(model, sp, batch, o.priors);
    cfg_tbl.front()["pool"] = pool;
    tables.front().second = cfg_tbl;
    auto with = analytic_traffic(model, sp, batch, pool, o.priors, o.merge);
    auto base = analytic_traffic(model, sp, batch, pool, 0, o.merge);
    auto tw = totals_of(with), tb = totals_of(base);
    tables.push_back({"layers", layer_rows(with.layers)});
    tables.push_back({"summary", ordered_json::array({summary_row(tw, &tb, prof)})});
    tables.push_back({"he", he_rows(with.he)});

    if (o.run) {
      SessionConfig sc;
      sc.slots = sp;
      sc.seed = o.seed;
      sc.n_inqueue = batch;
      sc.n_offline_pool = pool;
      sc.n_priors = o.priors;
      sc.merge_final_share = o.merge;
      auto inp = random_inputs(model, sp, batch, o.priors, o.seed);
      auto res = run_session(sc, model, inp);
      auto tm = totals_of(res);
      ordered_json mrow = summary_row(tm, &tb, prof);
      const bool match = tm.offline_bytes == tw.offline_bytes &&
                         tm.online_bytes == tw.online_bytes &&
                         tm.prior_online_bytes == tw.prior_online_bytes &&
                         res.he_delta == with.he;
      mrow["matches_analytic"] = match;
      tables.push_back({"measured_summary", ordered_json::array({mrow})});
      emit(tables, o.out);
      return match ? 0 : 1;
    }
    emit(tables, o.out);
    return 0;
  }

  // Cost-table config: each conv row is costed independently; the pool is
  // sized per row so one urgent input's precompute completes.
  if (o.run) throw CLI::ValidationError("--run", "requires a chain config");
  std::vector<LayerTraffic> all_layers;
  TrafficTotals tw{}, tb{};
  CostSnapshot he{};
  uint32_t layer_no = 0;
  for (const auto& g : cfg.layers) {
    for (uint32_t rep = 0; rep < std::max(1u, g.repeat); ++rep) {
      if (g.kind != LayerSpec::Kind::conv)
        throw std::invalid_argument("cost-table configs must contain conv rows only");
      ModelConfig one;
      one.slots = sp;
      one.layers.push_back(g);
      one.layers.back().repeat = 1;
      const auto model = build_layers(one, derive_seed(o.seed, layer_no));
      auto off = plan_offline(g.shape, sp);
      uint32_t pool = o.pool ? o.pool : batch;
      if (!o.pool && off.recycling())
        pool = std::max<uint64_t>(pool, off.per_prior_batch * std::max(1u, o.priors));
      auto with = analytic_traffic(model, sp, batch, pool, o.priors, o.merge);
      auto base = analytic_traffic(model, sp, batch, pool, 0, o.merge);
      with.layers.front().layer = layer_no++;
      all_layers.push_back(with.layers.front());
      auto add = [](TrafficTotals& acc, const TrafficTotals& x) {
        acc.offline_bytes += x.offline_bytes;
        acc.online_bytes += x.online_bytes;
        acc.prior_online_bytes += x.prior_online_bytes;
        acc.offline_rounds += x.offline_rounds;
        acc.online_rounds += x.online_rounds;
        acc.prior_half_rounds += x.prior_half_rounds;
      };
      add(tw, totals_of(with));
      add(tb, totals_of(base));
      for (int ph = 0; ph < 2; ++ph)
        for (int a = 0; a < 3; ++a)
          for (int op = 0; op < 6; ++op) he.v[ph][a][op] += with.he.v[ph][a][op];
    }
  }
  tables.push_back({"layers", layer_rows(all_layers)});
  tables.push_back({"summary", ordered_json::array({summary_row(tw, &tb, prof)})});
  tables.push_back({"he", he_rows(he)});
  emit(tables, o.out);
  return 0;
}

// ---------------------------------------------------------------------------
// queue-sim

struct QueueOpts {
  std::string config_path, arrivals_path;
  std::vector<std::string> policies;
  uint32_t batch = 0;
  bool merge = false;
  std::string net = "wan1";
  uint64_t seed = 1;
  std::string out = "csv";
};

int cmd_queue_sim(const QueueOpts& o) {
  const ModelConfig cfg = load_model_config(o.config_path);
  const auto model = build_layers(cfg, o.seed);
  const uint32_t batch = o.batch ? o.batch : cfg.batch_hint;
  const NetProfile prof = profile_by_name(o.net);
  const BatchTimeModel tm = batch_time_model(model, cfg.slots, o.merge, prof);
  const auto arrivals = load_arrivals(o.arrivals_path);

  std::vector<QueuePolicy> pols;
  if (o.policies.empty())
    pols = {QueuePolicy::batch_expand, QueuePolicy::drop_out, QueuePolicy::piggyback};
  else
    for (const auto& name : o.policies) pols.push_back(parse_policy(name));

  ordered_json inputs = ordered_json::array();
  ordered_json summary = ordered_json::array();
  for (QueuePolicy pol : pols) {
    auto rep = simulate_queue(arrivals, pol, tm, batch);
    auto base = simulate_queue(strip_priors(arrivals), pol, tm, batch);
    // Added wait per in-queue input against the urgent-free baseline.
    std::vector<double> base_wait;
    size_t bi = 0;
    double max_added = 0;
    for (const auto& row : rep.rows) {
      ordered_json r{{"policy", to_string(pol)},
                     {"id", row.id},
                     {"prior", row.prior},
                     {"arrive", row.arrive},
                     {"start", row.start},
                     {"finish", row.finish},
                     {"wait", row.wait()}};
      if (!row.prior) {
        const double added = row.wait() - base.rows[bi++].wait();
        r["added_wait"] = added;
        max_added = std::max(max_added, added);
      } else {
        r["added_wait"] = nullptr;
      }
      inputs.push_back(std::move(r));
    }
    summary.push_back({{"policy", to_string(pol)},
                       {"batch", batch},
                       {"makespan", rep.makespan},
                       {"mean_inqueue_wait", rep.mean_inqueue_wait},
                       {"mean_prior_wait", rep.mean_prior_wait},
                       {"max_added_inqueue_wait", max_added}});
  }
  ordered_json tmj = ordered_json::array();
  tmj.push_back({{"net", prof.name},
                 {"fixed_s", tm.fixed_s},
                 {"per_input_s", tm.per_input_s},
                 {"prior_extra_s", tm.prior_extra_s},
                 {"batch_seconds", tm.seconds(batch)}});
  emit({{"time_model", tmj}, {"inputs", inputs}, {"summary", summary}}, o.out);
  return 0;
}

// ---------------------------------------------------------------------------
// verify

struct VerifyState {
  int failures = 0;
  void report(bool ok, const std::string& what) {
    std::cout << (ok ? "[PASS] " : "[FAIL] ") << what << "\n";
    if (!ok) ++failures;
  }
};

// Expected per-urgent batch sizes for the reference rows at N = 8192.
struct PinnedRow {
  uint32_t Hi, Ci, fh, Co;
  uint64_t online_b, offline_b;
};
const PinnedRow kPinnedRows[] = {
    {56, 64, 3, 64, 49, 4},    {28, 128, 3, 128, 17, 30},  {14, 256, 3, 256, 7, 82},
    {7, 512, 3, 512, 4, 990},  {112, 64, 3, 128, 1, 4},    {56, 128, 3, 256, 1, 4},
    {56, 256, 3, 256, 1, 4},   {28, 256, 3, 512, 49, 30},  {28, 512, 3, 512, 1, 30},
    {14, 512, 3, 512, 17, 82}, {27, 96, 5, 256, 19, 55},   {13, 256, 3, 384, 8, 144},
    {13, 384, 3, 384, 102, 144}, {13, 384, 3, 256, 102, 144},
};

void verify_plan_pins(VerifyState& st) {
  SlotParams sp{.N = 8192, .p = default_modulus(8192)};
  bool ok = true;
  for (const auto& r : kPinnedRows) {
    ConvShape s{.Ci = r.Ci, .Hi = r.Hi, .Wi = r.Hi, .Co = r.Co,
                .Hf = r.fh, .Wf = r.fh, .stride = 1, .pad = Padding::same};
    ok = ok && plan_online(s, sp).bsize_display() == r.online_b;
    ok = ok && plan_offline(s, sp).bsize_display() == r.offline_b;
  }
  st.report(ok, "plan geometry matches the pinned reference rows");
}

void verify_layouts(VerifyState& st, uint64_t seed, uint32_t count, bool inject_fault) {
  SeededRng rng(derive_seed(seed, 0x1a07));
  uint32_t done = 0, attempts = 0, faults_caught = 0, faults_tried = 0;
  bool ok = true;
  while (done < count && attempts < count * 40) {
    ++attempts;
    const uint32_t N = (attempts % 3 == 0) ? 256 : (attempts % 3 == 1 ? 1024 : 8192);
    SlotParams sp{.N = N, .p = 257};
    ConvShape s{.Ci = static_cast<uint32_t>(1 + rng.below(48)),
                .Hi = static_cast<uint32_t>(3 + rng.below(27)),
                .Wi = 0, .Co = static_cast<uint32_t>(1 + rng.below(48)),
                .Hf = static_cast<uint32_t>(1 + 2 * rng.below(3)),
                .Wf = 0, .stride = 1, .pad = Padding::same};
    s.Wi = s.Hi;
    s.Wf = s.Hf;

    auto check_one = [&](ChainLayout lay) {
      auto cover = check_disjoint_total_cover(lay);
      auto cons = check_prior_conservation(lay);
      if (!cover.ok || !cons.ok) {
        ok = false;
        return;
      }
      if (inject_fault && faults_tried < 8 && lay.n_priors > 0) {
        ++faults_tried;
        inject_layout_fault(lay, static_cast<int>(faults_tried % 2));
        if (!check_disjoint_total_cover(lay).ok || !check_prior_conservation(lay).ok)
          ++faults_caught;
      }
      ++done;
    };

    auto on = plan_online(s, sp);
    if (on.recycling()) {
      const uint32_t P = static_cast<uint32_t>(1 + rng.below(3));
      const uint32_t B =
          static_cast<uint32_t>(on.per_prior_batch * P + rng.below(4));
      check_one(build_chain_layout(on, B, P));
    }
    if (done >= count) break;
    auto off = plan_offline(s, sp);
    if (!off.wide_row && off.recycling()) {
      const uint32_t P = static_cast<uint32_t>(1 + rng.below(2));
      check_one(build_chain_layout(off, static_cast<uint32_t>(off.per_prior_batch * P), P));
    }
  }
  st.report(ok && done >= count,
            "random layout sweep: " + std::to_string(done) + " layouts cover and conserve");
  if (inject_fault)
    st.report(faults_tried > 0 && faults_caught == faults_tried,
              "negative control: " + std::to_string(faults_caught) + "/" +
                  std::to_string(faults_tried) + " injected layout faults rejected");
}

void run_two_party(const std::function<void(Link&)>& client_fn,
                   const std::function<void(Link&)>& server_fn) {
  auto [c_ch, s_ch] = make_inproc_pair();
  std::exception_ptr c_err, s_err;
  std::thread server([&] {
    try {
      Link l(*s_ch, Dir::s2c);
      server_fn(l);
    } catch (...) {
      s_err = std::current_exception();
    }
    s_ch.reset();
  });
  try {
    Link l(*c_ch, Dir::c2s);
    client_fn(l);
  } catch (...) {
    c_err = std::current_exception();
  }
  c_ch.reset();
  server.join();
  if (c_err) std::rethrow_exception(c_err);
  if (s_err) std::rethrow_exception(s_err);
}

bool drelu_matches(const Modulus& mod, const std::vector<uint64_t>& x, uint64_t seed, bool use_ot) {
  const size_t n = x.size();
  std::vector<uint64_t> s0(n), s1(n);
  SeededRng share_rng(derive_seed(seed, 0x5e));
  share_vec(share_rng, mod, x, s0, s1);
  std::vector<uint8_t> h0, h1;
  const Category cat{Phase::online, CostAttr::common_drelu};
  run_two_party(
      [&](Link& l) {
        std::unique_ptr<TripleSource> src;
        if (use_ot)
          src = std::make_unique<OtTripleSource>(l, 0, seed, cat);
        else
          src = std::make_unique<DealerTripleSource>(seed, 0);
        src->prefill(drelu_triple_words(mod, n));
        GmwContext ctx(l, *src, 0, cat);
        SeededRng rng(derive_seed(seed, 0xc0));
        h0 = drelu_gmw(ctx, mod, s0, rng);
      },
      [&](Link& l) {
        std::unique_ptr<TripleSource> src;
        if (use_ot)
          src = std::make_unique<OtTripleSource>(l, 1, seed, cat);
        else
          src = std::make_unique<DealerTripleSource>(seed, 1);
        src->prefill(drelu_triple_words(mod, n));
        GmwContext ctx(l, *src, 1, cat);
        SeededRng rng(derive_seed(seed, 0xc1));
        h1 = drelu_gmw(ctx, mod, s1, rng);
      });
  for (size_t i = 0; i < n; ++i) {
    const bool want = mod.signed_lift(x[i]) > 0;
    if (((h0[i] ^ h1[i]) != 0) != want) return false;
  }
  return true;
}

void verify_drelu(VerifyState& st, uint64_t seed) {
  const Modulus small(257);
  std::vector<uint64_t> all(small.p);
  for (uint64_t v = 0; v < small.p; ++v) all[v] = v;
  st.report(drelu_matches(small, all, seed, false),
            "sign protocol: exhaustive over Z_257 (dealer triples)");
  st.report(drelu_matches(small, all, seed + 1, true),
            "sign protocol: exhaustive over Z_257 (OT triples)");

  const Modulus big(default_modulus(8192));
  SeededRng rng(derive_seed(seed, 0xd2));
  std::vector<uint64_t> x(2000);
  rng.fill_below(x, big.p);
  st.report(drelu_matches(big, x, seed + 2, false),
            "sign protocol: 2000 random points at the default modulus");
}

void verify_session_oracle(VerifyState& st, uint64_t seed) {
  SlotParams sp{.N = 8192, .p = 257};
  const Modulus mod(sp.p);
  ConvShape shape{.Ci = 2, .Hi = 6, .Wi = 6, .Co = 3, .Hf = 3, .Wf = 3,
                  .stride = 1, .pad = Padding::same};
  ModelConfig mc;
  mc.slots = sp;
  mc.layers.push_back({LayerSpec::Kind::conv, shape, ActKind::relu, 2, 1});
  const auto model = build_layers(mc, seed);

  SessionConfig sc;
  sc.slots = sp;
  sc.seed = seed;
  sc.n_inqueue = 2;
  sc.n_offline_pool = 36;  // full urgent coverage: offline per-urgent batch
  sc.n_priors = 1;
  sc.merge_final_share = true;
  auto inp = random_inputs(model, sp, 2, 1, seed);
  auto res = run_session(sc, model, inp);

  auto expect = [&](const std::vector<uint64_t>& x0, const std::vector<uint64_t>& x1) {
    RingTensor3 x(shape.Ci, shape.Hi, shape.Wi);
    for (size_t i = 0; i < x.data.size(); ++i) {
      const uint64_t v = mod.add(x0[i], x1[i]);
      x.data[i] = mod.signed_lift(v) > 0 ? v : 0;  // relu on the signed lift
    }
    return conv_ref(x, model.front().kernel, shape, mod);
  };
  bool ok = res.he_delta.op_total(HeOp::rot) == 0 && res.he_delta.op_total(HeOp::extr) == 0;
  for (size_t b = 0; ok && b < 2; ++b) {
    auto want = expect(inp.inqueue0[b], inp.inqueue1[b]);
    for (size_t i = 0; ok && i < want.data.size(); ++i)
      ok = mod.add(res.inqueue0[b][i], res.inqueue1[b][i]) == want.data[i];
  }
  {
    auto want = expect(inp.prior0[0], inp.prior1[0]);
    for (size_t i = 0; ok && i < want.data.size(); ++i)
      ok = mod.add(res.prior0[0][i], res.prior1[0][i]) == want.data[i];
  }
  st.report(ok, "end-to-end session matches the plaintext conv(relu(x)) oracle");
}

void verify_uniformity(VerifyState& st, uint64_t seed) {
  SlotParams sp{.N = 8192, .p = 257};
  ConvShape shape{.Ci = 1, .Hi = 16, .Wi = 16, .Co = 2, .Hf = 3, .Wf = 3,
                  .stride = 1, .pad = Padding::same};
  ModelConfig mc;
  mc.slots = sp;
  mc.layers.push_back({LayerSpec::Kind::conv, shape, ActKind::relu, 2, 1});
  const auto model = build_layers(mc, seed);

  SessionConfig sc;
  sc.slots = sp;
  sc.seed = seed;
  sc.n_inqueue = 13;
  sc.n_offline_pool = 13;
  sc.capture_uniformity = true;
  auto inp = random_inputs(model, sp, 13, 0, seed);
  auto res = run_session(sc, model, inp);

  auto chi2 = [&](const std::vector<uint64_t>& samples) {
    std::vector<uint64_t> hist(sp.p, 0);
    for (uint64_t v : samples) ++hist[v];
    const double expect = static_cast<double>(samples.size()) / static_cast<double>(sp.p);
    double stat = 0;
    for (uint64_t h : hist) {
      const double d = static_cast<double>(h) - expect;
      stat += d * d / expect;
    }
    return stat;
  };
  // chi^2 critical value at significance 0.01 with 256 degrees of freedom.
  const double kCrit = 311.560343;
  const double t_stat = chi2(res.captured_t);
  st.report(res.captured_t.size() >= 100000 && t_stat < kCrit,
            "masked t residues look uniform (chi^2 " + num_str(t_stat) + " < " +
                num_str(kCrit) + " on " + std::to_string(res.captured_t.size()) + " samples)");
}

int cmd_verify(uint64_t seed, uint32_t layouts, bool inject_fault) {
  VerifyState st;
  verify_plan_pins(st);
  verify_layouts(st, seed, layouts, inject_fault);
  verify_drelu(st, seed);
  verify_session_oracle(st, seed);
  verify_uniformity(st, seed);
  std::cout << (st.failures ? "FAILED" : "OK") << " (" << st.failures << " failures)\n";
  return st.failures ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cost and geometry workbench for the slot-recycling private-inference engine"};
  app.require_subcommand(1);

  // plan
  std::vector<std::string> plan_shapes;
  uint32_t plan_N = 8192;
  uint64_t plan_p = 0;
  std::string plan_out = "csv";
  auto* plan = app.add_subcommand("plan", "slot-plan geometry for conv rows");
  plan->add_option("--shape", plan_shapes, "conv row as Hi,Ci,fh,Co (repeatable)");
  plan->add_option("--N", plan_N, "SIMD slots per ciphertext");
  plan->add_option("--p", plan_p, "plaintext modulus (0 = default for N)");
  plan->add_option("--out", plan_out, "csv|json")->check(CLI::IsMember({"csv", "json"}));

  // baseline
  std::string bl_shape = "56,64,3,64", bl_out = "csv";
  uint32_t bl_N = 8192;
  auto* bl = app.add_subcommand("baseline", "published cost models for one conv row");
  bl->add_option("--shape", bl_shape, "conv row as Hi,Ci,fh,Co");
  bl->add_option("--N", bl_N, "SIMD slots per ciphertext");
  bl->add_option("--out", bl_out, "csv|json")->check(CLI::IsMember({"csv", "json"}));

  // block
  BlockOpts bo;
  auto* blk = app.add_subcommand("block", "run or model one relu-conv block");
  blk->add_option("--shape", bo.shape_text, "conv row as Hi,Ci,fh,Co");
  blk->add_option("--N", bo.N, "SIMD slots per ciphertext");
  blk->add_option("--p", bo.p, "plaintext modulus (0 = default for N)");
  blk->add_option("--batch", bo.batch, "in-queue batch size (0 = per-urgent batch)");
  blk->add_option("--pool", bo.pool, "offline pool size (0 = batch)");
  blk->add_option("--priors", bo.priors, "urgent inputs");
  blk->add_flag("--merge-final-share", bo.merge, "append urgent shares to the last frame");
  blk->add_flag("--analytic", bo.analytic, "use the analytic model instead of running");
  blk->add_flag("--tcp", bo.tcp, "localhost TCP transport instead of in-process");
  blk->add_option("--drelu", bo.drelu, "dealer|ot")->check(CLI::IsMember({"dealer", "ot"}));
  blk->add_option("--net", bo.net, "network profile for modeled latency");
  blk->add_option("--seed", bo.seed, "session seed");
  blk->add_option("--parallel-sessions", bo.parallel, "run this many identical sessions concurrently");
  blk->add_option("--record", bo.record_path, "save the client-side frame record here");
  blk->add_option("--replay", bo.replay_path, "check frames against a saved record");
  blk->add_option("--out", bo.out, "csv|json")->check(CLI::IsMember({"csv", "json"}));

  // model
  ModelOpts mo;
  auto* mdl = app.add_subcommand("model", "cost a JSON model config");
  mdl->add_option("--config", mo.config_path, "model config path")->required();
  mdl->add_option("--batch", mo.batch, "in-queue batch size (0 = config hint)");
  mdl->add_option("--pool", mo.pool, "offline pool size (0 = auto-size)");
  mdl->add_option("--priors", mo.priors, "urgent inputs");
  mdl->add_flag("--merge-final-share", mo.merge, "append urgent shares to the last frame");
  mdl->add_flag("--run", mo.run, "also execute a real session (chain configs)");
  mdl->add_option("--net", mo.net, "network profile for modeled latency");
  mdl->add_option("--seed", mo.seed, "weight-sampling seed");
  mdl->add_option("--out", mo.out, "csv|json")->check(CLI::IsMember({"csv", "json"}));

  // queue-sim
  QueueOpts qo;
  auto* qs = app.add_subcommand("queue-sim", "urgent-arrival policies on a trace");
  qs->add_option("--config", qo.config_path, "model config path (timing source)")->required();
  qs->add_option("--arrivals", qo.arrivals_path, "arrival trace path")->required();
  qs->add_option("--policy", qo.policies, "batch_expand|drop_out|piggyback (repeatable)");
  qs->add_option("--batch", qo.batch, "batch size (0 = config hint)");
  qs->add_flag("--merge-final-share", qo.merge, "merged urgent share frames");
  qs->add_option("--net", qo.net, "network profile");
  qs->add_option("--seed", qo.seed, "weight-sampling seed");
  qs->add_option("--out", qo.out, "csv|json")->check(CLI::IsMember({"csv", "json"}));

  // verify
  uint64_t v_seed = 1;
  uint32_t v_layouts = 500;
  bool v_fault = false;
  auto* vf = app.add_subcommand("verify", "self-checks, one pass/fail line each");
  vf->add_option("--seed", v_seed, "randomness seed");
  vf->add_option("--layouts", v_layouts, "random layouts to sweep");
  vf->add_flag("--inject-layout-fault", v_fault, "corrupt layouts and require rejection");

  CLI11_PARSE(app, argc, argv);

  try {
    if (plan->parsed()) return cmd_plan(plan_shapes, plan_N, plan_p, plan_out);
    if (bl->parsed()) return cmd_baseline(bl_shape, bl_N, bl_out);
    if (blk->parsed()) return cmd_block(bo);
    if (mdl->parsed()) return cmd_model(mo);
    if (qs->parsed()) return cmd_queue_sim(qo);
    if (vf->parsed()) return cmd_verify(v_seed, v_layouts, v_fault);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
