// JSON model and arrival configs for the CLI.
//
// Model files list layer geometry only (the shape tuples); weights are
// sampled uniformly mod p at load time since correctness is oracle-relative.
//
//   {
//     "name": "resnet-blocks", "N": 8192, "p": 33832961, "batch_hint": 49,
//     "chain": false,   // per-layer cost rows; true (default) = runnable chain
//     "layers": [
//       {"kind": "conv", "Hi": 56, "Ci": 64, "fh": 3, "Co": 64,
//        "stride": 1, "pad": "same", "act": "relu", "repeat": 4},
//       {"kind": "meanpool_sum", "win": 2},
//       {"kind": "batchnorm"}
//     ]
//   }
//
// Arrival files drive the queue simulator:
//
//   {"inputs": [{"t": 0.0, "prior": false, "count": 49, "id": "wave1"},
//               {"t": 1.25, "prior": true}]}
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qj/plan.hpp"
#include "qj/protocol.hpp"
#include "qj/queue_sim.hpp"

namespace qj {

struct LayerGeom {
  LayerSpec::Kind kind = LayerSpec::Kind::conv;
  ConvShape shape;  // conv only
  ActKind act = ActKind::relu;
  uint32_t win = 2;     // meanpool_sum only
  uint32_t repeat = 1;  // conv only: emit this many copies
};

struct ModelConfig {
  std::string name;
  SlotParams slots;
  uint32_t batch_hint = 1;  // batch size that fully recycles one urgent input
  // chain = true: layers feed each other (runnable end to end, dims must
  // match).  chain = false: the layer list is a per-layer cost table (the
  // published accounting style) -- each conv row is costed independently,
  // standing in for intervening downsampling layers outside this engine's
  // scope.
  bool chain = true;
  std::vector<LayerGeom> layers;
};

ModelConfig parse_model_config(const std::string& json_text);
ModelConfig load_model_config(const std::string& path);

// Expands repeats and samples weights/affine parameters mod p.
std::vector<LayerSpec> build_layers(const ModelConfig& cfg, uint64_t seed);

std::vector<Arrival> parse_arrivals(const std::string& json_text);
std::vector<Arrival> load_arrivals(const std::string& path);

}  // namespace qj
