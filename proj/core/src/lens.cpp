#include "ict/lens.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ict {

std::vector<float> layer_logits(std::span<const float> hidden, const Tensor& unembed) {
  if (unembed.rank() != 2 || unembed.dim(1) != hidden.size()) {
    throw std::invalid_argument("layer_logits: unembed " + format_dims(unembed.dims()) +
                                " incompatible with hidden size " + std::to_string(hidden.size()));
  }
  const std::size_t V = unembed.dim(0);
  std::vector<float> logits(V);
  for (std::size_t v = 0; v < V; ++v) {
    const auto row = unembed.row(v);
    double acc = 0.0;
    for (std::size_t k = 0; k < hidden.size(); ++k) acc += static_cast<double>(row[k]) * hidden[k];
    logits[v] = static_cast<float>(acc);
  }
  return logits;
}

LabelScores label_scores(std::span<const float> logits, const AnswerSpace& answers) {
  const auto t = answers.token_ids[kPositiveLabel];
  const auto f = answers.token_ids[kNegativeLabel];
  if (t >= logits.size() || f >= logits.size()) {
    throw std::invalid_argument("label_scores: answer token id outside logits");
  }
  double max_logit = -INFINITY;
  for (float z : logits) {
    if (!std::isfinite(z)) throw std::domain_error("label_scores: non-finite logit");
    max_logit = std::max(max_logit, static_cast<double>(z));
  }
  double total = 0.0;
  for (float z : logits) total += std::exp(z - max_logit);

  LabelScores s;
  s.p_true = std::exp(logits[t] - max_logit) / total;
  s.p_false = std::exp(logits[f] - max_logit) / total;
  // p_true / (p_true + p_false) in its underflow-free form.
  s.normalized_positive = 1.0 / (1.0 + std::exp(static_cast<double>(logits[f]) - logits[t]));
  return s;
}

LayerLabelScores decode_layers(const TraceSet& set, const ExampleRecord& record) {
  const std::size_t layers = set.model_meta.layers + 1;
  LayerLabelScores out;
  out.scores.reserve(layers);
  out.normalized_positive.reserve(layers);
  out.raw.reserve(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    const auto logits = layer_logits(record.answer_hidden(l), set.unembed);
    const auto s = label_scores(logits, set.answer_space);
    out.raw.push_back(s);
    out.normalized_positive.push_back(s.normalized_positive);
    out.scores.push_back({s.normalized_positive, 1.0 - s.normalized_positive});
  }
  return out;
}

std::vector<std::vector<double>> positive_score_matrix(const TraceSet& set) {
  std::vector<std::vector<double>> rows;
  rows.reserve(set.records.size());
  for (const auto& rec : set.records) rows.push_back(decode_layers(set, rec).normalized_positive);
  return rows;
}

LayerThresholds fit_thresholds(std::span<const std::vector<double>> p_hat, std::string fitted_on) {
  if (p_hat.size() < 2) throw std::invalid_argument("fit_thresholds: need at least 2 examples");
  const std::size_t layers = p_hat.front().size();
  LayerThresholds out;
  out.fitted_on = std::move(fitted_on);
  out.n_examples = p_hat.size();
  out.t.resize(layers);

  std::vector<double> column(p_hat.size());
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t i = 0; i < p_hat.size(); ++i) {
      if (p_hat[i].size() != layers) throw std::invalid_argument("fit_thresholds: ragged rows");
      column[i] = p_hat[i][l];
    }
    const std::size_t n = column.size();
    const std::size_t mid = n / 2;
    std::nth_element(column.begin(), column.begin() + mid, column.end());
    const double upper = column[mid];
    if (n % 2 == 1) {
      out.t[l] = upper;
    } else {
      const double lower = *std::max_element(column.begin(), column.begin() + mid);
      out.t[l] = lower + (upper - lower) / 2.0;
    }
  }
  return out;
}

LatentPredictionVector balanced_prediction(std::span<const double> p_hat, const LayerThresholds& t) {
  if (p_hat.size() != t.t.size()) {
    throw std::invalid_argument("balanced_prediction: " + std::to_string(p_hat.size()) +
                                " layers vs " + std::to_string(t.t.size()) + " thresholds");
  }
  LatentPredictionVector out;
  out.labels.resize(p_hat.size());
  for (std::size_t l = 0; l < p_hat.size(); ++l) {
    out.labels[l] = p_hat[l] >= t.t[l] ? kPositiveLabel : kNegativeLabel;
  }
  return out;
}

LatentPredictionVector raw_prediction(std::span<const double> p_hat) {
  LatentPredictionVector out;
  out.labels.reserve(p_hat.size());
  for (double p : p_hat) out.labels.push_back(p >= 0.5 ? kPositiveLabel : kNegativeLabel);
  return out;
}

}  // namespace ict
