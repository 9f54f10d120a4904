#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "ict/trace.hpp"

namespace ict {

/// Logit lens: unembed * hidden, pre-softmax. Throws on dimension mismatch.
std::vector<float> layer_logits(std::span<const float> hidden, const Tensor& unembed);

struct LabelScores {
  double p_true = 0.0;   // full-vocabulary softmax mass on the positive token
  double p_false = 0.0;  // same for the negative token
  double normalized_positive = 0.5;  // p_true / (p_true + p_false)
};

/// Throws std::domain_error on non-finite logits.
LabelScores label_scores(std::span<const float> logits, const AnswerSpace& answers);

/// Per-layer two-label scores decoded at one record's answer position.
struct LayerLabelScores {
  std::vector<std::array<double, 2>> scores;   // [L+1][label], rows sum to 1
  std::vector<double> normalized_positive;     // [L+1], equals scores[l][0]
  std::vector<LabelScores> raw;                // [L+1], unnormalized pair
};

LayerLabelScores decode_layers(const TraceSet& set, const ExampleRecord& record);

/// p-hat rows for every record of the set, in record order.
std::vector<std::vector<double>> positive_score_matrix(const TraceSet& set);

struct LayerThresholds {
  std::vector<double> t;  // [L+1]
  std::string fitted_on;
  std::size_t n_examples = 0;
};

/// Per-layer median of p-hat; an even count takes the midpoint of the
/// central pair. Requires at least two rows of equal length.
LayerThresholds fit_thresholds(std::span<const std::vector<double>> p_hat,
                               std::string fitted_on = {});

struct LatentPredictionVector {
  std::vector<Label> labels;  // [L+1]

  friend bool operator==(const LatentPredictionVector&, const LatentPredictionVector&) = default;
};

/// Positive iff p-hat >= threshold, per layer.
LatentPredictionVector balanced_prediction(std::span<const double> p_hat, const LayerThresholds& t);

/// Argmax over the two labels per layer; ties go to the positive label.
LatentPredictionVector raw_prediction(std::span<const double> p_hat);

}  // namespace ict
