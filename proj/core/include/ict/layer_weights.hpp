#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace ict {

struct TrainingMeta {
  double lr = 0.0;
  std::size_t iterations = 0;
  std::size_t n_heldout = 0;
  std::uint64_t seed = 0;
  double l2 = 0.0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

/// Per-layer aggregation weights over the intermediate layers 1..L-1.
struct LayerWeights {
  std::vector<double> w;
  std::string source_dataset;
  TrainingMeta training_meta;

  /// 1/(L-1) on every intermediate layer; recovers plain internal consistency.
  static LayerWeights uniform(std::size_t intermediate_layers);
};

/// JSON document used by the transfer workflow. Doubles are written with
/// round-trip precision so a reload reproduces w bit-for-bit.
std::string to_json(const LayerWeights& weights);
LayerWeights layer_weights_from_json(std::string_view text);

void save_layer_weights(const LayerWeights& weights, const std::string& path);
LayerWeights load_layer_weights(const std::string& path);

}  // namespace ict
