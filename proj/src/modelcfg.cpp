#include "qj/modelcfg.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "qj/rng.hpp"

namespace qj {

namespace {

using nlohmann::json;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_json(const std::string& text, const char* what) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw std::invalid_argument(std::string("invalid JSON in ") + what);
  return j;
}

uint64_t require_u64(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_number_unsigned())
    throw std::invalid_argument(std::string("model config: missing or invalid field '") + key +
                                "'");
  return j[key].get<uint64_t>();
}

}  // namespace

ModelConfig parse_model_config(const std::string& json_text) {
  const json j = parse_json(json_text, "model config");
  ModelConfig cfg;
  cfg.name = j.value("name", "unnamed");
  cfg.slots.N = static_cast<uint32_t>(j.value("N", 8192u));
  cfg.slots.p = j.contains("p") ? require_u64(j, "p") : default_modulus(cfg.slots.N);
  cfg.batch_hint = j.value("batch_hint", 1u);
  cfg.chain = j.value("chain", true);
  cfg.slots.validate();

  if (!j.contains("layers") || !j["layers"].is_array() || j["layers"].empty())
    throw std::invalid_argument("model config: 'layers' must be a non-empty array");

  for (const json& lj : j["layers"]) {
    const std::string kind = lj.value("kind", "conv");
    LayerGeom g;
    if (kind == "conv") {
      g.kind = LayerSpec::Kind::conv;
      g.shape.Hi = static_cast<uint32_t>(require_u64(lj, "Hi"));
      g.shape.Wi = static_cast<uint32_t>(lj.value("Wi", g.shape.Hi));
      g.shape.Ci = static_cast<uint32_t>(require_u64(lj, "Ci"));
      g.shape.Co = static_cast<uint32_t>(require_u64(lj, "Co"));
      g.shape.Hf = static_cast<uint32_t>(require_u64(lj, "fh"));
      g.shape.Wf = static_cast<uint32_t>(lj.value("fw", g.shape.Hf));
      g.shape.stride = static_cast<uint32_t>(lj.value("stride", 1u));
      const std::string pad = lj.value("pad", "same");
      if (pad == "same")
        g.shape.pad = Padding::same;
      else if (pad == "valid")
        g.shape.pad = Padding::valid;
      else
        throw std::invalid_argument("model config: pad must be 'same' or 'valid'");
      const std::string act = lj.value("act", "relu");
      if (act == "relu")
        g.act = ActKind::relu;
      else if (act == "identity")
        g.act = ActKind::identity;
      else
        throw std::invalid_argument("model config: act must be 'relu' or 'identity'");
      g.repeat = lj.value("repeat", 1u);
      if (g.repeat == 0) throw std::invalid_argument("model config: repeat must be positive");
    } else if (kind == "meanpool_sum") {
      g.kind = LayerSpec::Kind::meanpool_sum;
      g.win = static_cast<uint32_t>(require_u64(lj, "win"));
    } else if (kind == "batchnorm") {
      g.kind = LayerSpec::Kind::batchnorm;
    } else {
      throw std::invalid_argument("model config: unknown layer kind '" + kind + "'");
    }
    cfg.layers.push_back(g);
  }
  return cfg;
}

ModelConfig load_model_config(const std::string& path) {
  return parse_model_config(read_file(path));
}

std::vector<LayerSpec> build_layers(const ModelConfig& cfg, uint64_t seed) {
  const uint64_t p = cfg.slots.p;
  std::vector<LayerSpec> model;
  uint32_t channels = 0;  // running output-channel count for batchnorm

  uint32_t li = 0;
  for (const LayerGeom& g : cfg.layers) {
    switch (g.kind) {
      case LayerSpec::Kind::conv: {
        for (uint32_t r = 0; r < g.repeat; ++r) {
          ConvShape sh = g.shape;
          if (r > 0) {
            // Repeated blocks chain on their own output grid.
            const auto od = out_dims(model.back().shape);
            sh.Ci = model.back().shape.Co;
            sh.Hi = od.Ho;
            sh.Wi = od.Wo;
          }
          SeededRng rng(derive_seed(seed, 0x6D, li++));
          Kernel k(sh.Co, sh.Ci, sh.Hf, sh.Wf);
          rng.fill_below(k.data, p);
          model.push_back(LayerSpec::conv_layer(sh, std::move(k), g.act));
          channels = sh.Co;
        }
        break;
      }
      case LayerSpec::Kind::meanpool_sum:
        model.push_back(LayerSpec::meanpool(g.win));
        ++li;
        break;
      case LayerSpec::Kind::batchnorm: {
        if (channels == 0)
          throw std::invalid_argument("model config: batchnorm before any convolution");
        SeededRng rng(derive_seed(seed, 0x6D, li++));
        std::vector<uint64_t> scale(channels), shift(channels);
        rng.fill_below(scale, p);
        rng.fill_below(shift, p);
        model.push_back(LayerSpec::batchnorm_layer(std::move(scale), std::move(shift)));
        break;
      }
    }
  }
  return model;
}

std::vector<Arrival> parse_arrivals(const std::string& json_text) {
  const json j = parse_json(json_text, "arrivals");
  if (!j.contains("inputs") || !j["inputs"].is_array())
    throw std::invalid_argument("arrivals: 'inputs' must be an array");
  std::vector<Arrival> out;
  for (const json& e : j["inputs"]) {
    if (!e.contains("t") || !e["t"].is_number())
      throw std::invalid_argument("arrivals: each input needs a numeric 't'");
    const double t = e["t"].get<double>();
    const bool prior = e.value("prior", false);
    const uint32_t count = e.value("count", 1u);
    const std::string id = e.value("id", "");
    for (uint32_t k = 0; k < count; ++k) {
      Arrival a;
      a.t = t;
      a.prior = prior;
      if (!id.empty()) a.id = count == 1 ? id : id + "_" + std::to_string(k);
      out.push_back(std::move(a));
    }
  }
  return out;
}

std::vector<Arrival> load_arrivals(const std::string& path) {
  return parse_arrivals(read_file(path));
}

}  // namespace qj
