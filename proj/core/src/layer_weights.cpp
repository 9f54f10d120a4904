#include "ict/layer_weights.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace ict {

using nlohmann::json;

LayerWeights LayerWeights::uniform(std::size_t intermediate_layers) {
  if (intermediate_layers == 0) throw std::invalid_argument("LayerWeights: need at least one layer");
  LayerWeights out;
  out.w.assign(intermediate_layers, 1.0 / static_cast<double>(intermediate_layers));
  out.source_dataset = "uniform";
  return out;
}

std::string to_json(const LayerWeights& weights) {
  const auto& m = weights.training_meta;
  json doc;
  doc["w"] = weights.w;
  doc["source_dataset"] = weights.source_dataset;
  doc["training_meta"] = {{"lr", m.lr},
                          {"iterations", m.iterations},
                          {"n_heldout", m.n_heldout},
                          {"seed", m.seed},
                          {"l2", m.l2},
                          {"initial_loss", m.initial_loss},
                          {"final_loss", m.final_loss}};
  return doc.dump(2) + "\n";
}

LayerWeights layer_weights_from_json(std::string_view text) {
  LayerWeights out;
  try {
    const auto doc = json::parse(text);
    out.w = doc.at("w").get<std::vector<double>>();
    out.source_dataset = doc.value("source_dataset", std::string{});
    if (doc.contains("training_meta")) {
      const auto& m = doc.at("training_meta");
      out.training_meta.lr = m.value("lr", 0.0);
      out.training_meta.iterations = m.value("iterations", std::size_t{0});
      out.training_meta.n_heldout = m.value("n_heldout", std::size_t{0});
      out.training_meta.seed = m.value("seed", std::uint64_t{0});
      out.training_meta.l2 = m.value("l2", 0.0);
      out.training_meta.initial_loss = m.value("initial_loss", 0.0);
      out.training_meta.final_loss = m.value("final_loss", 0.0);
    }
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("layer weights JSON: ") + e.what());
  }
  if (out.w.empty()) throw std::runtime_error("layer weights JSON: empty w");
  for (double v : out.w) {
    if (!std::isfinite(v)) throw std::runtime_error("layer weights JSON: non-finite weight");
  }
  return out;
}

void save_layer_weights(const LayerWeights& weights, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << to_json(weights);
}

LayerWeights load_layer_weights(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return layer_weights_from_json(buffer.str());
}

}  // namespace ict
