#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ict/logistic.hpp"
#include "ict/trace.hpp"

namespace ict {

/// Head-averaged attention mass from the answer token onto each segment,
/// one row per layer, columns in Segment order.
struct AttentionProfile {
  std::vector<std::array<double, kSegmentCount>> scores;
};

/// Requires attention rows and a segment map on the record.
AttentionProfile attention_score(const ExampleRecord& record);

/// Element-wise mean over records that carry attention and segments.
AttentionProfile mean_attention_profile(const TraceSet& set);

struct OutputProbe {
  std::vector<double> w_probe;  // no intercept
  double l2 = 0.0;
  double train_accuracy = 0.0;
  double cv_accuracy = 0.0;  // 5-fold, at the chosen l2
};

/// Intercept-free L2 logistic regression from final hidden states to the
/// model's own outputs; l2 picked by 5-fold cross-validated accuracy (ties
/// prefer the smaller strength), then refit on all rows.
OutputProbe fit_output_probe(const Tensor& last_hidden, std::span<const Label> model_outputs,
                             std::span<const double> l2_grid = {}, std::uint64_t seed = 0);

struct TopVector {
  std::size_t layer = 0;
  std::size_t index = 0;  // row of that layer's value matrix
  double cosine = 0.0;
};

enum class TopScope { global, per_layer };

struct ValueVectorReport {
  std::vector<std::size_t> per_layer_top_counts;
  std::vector<TopVector> top_vectors;
  std::vector<TopVector> zero_norm;  // excluded from ranking
  std::vector<double> top_singular_vector;
  std::map<std::string, std::vector<std::string>> vocab_projections;
};

/// Every value vector ranked by cosine with the probe, descending; ties by
/// (layer, index) ascending.
std::vector<TopVector> rank_value_vectors(std::span<const Tensor> ffn_value_matrices,
                                          std::span<const double> probe,
                                          std::vector<TopVector>* zero_norm = nullptr);

/// Top ceil(0.001 * L * d_m) vectors (globally, or that many per layer).
ValueVectorReport value_vector_similarity(std::span<const Tensor> ffn_value_matrices,
                                          const OutputProbe& probe,
                                          TopScope scope = TopScope::global);

/// Right singular vector of the largest singular value of the stacked rows,
/// signed so its largest-magnitude component is positive.
std::vector<double> top_singular_vector(std::span<const std::vector<double>> stack);

/// True for tokens rendered as \uXXXX escapes or made only of non-printable
/// code points.
bool is_escape_artifact(std::string_view token);

/// Tokens of the k largest entries of unembed * v after dropping escape
/// artifacts. Throws when fewer than k tokens survive.
std::vector<std::string> vocab_projection(std::span<const double> v, const Tensor& unembed,
                                          std::span<const std::string> vocab, std::size_t k);

struct AnatomyOptions {
  TopScope scope = TopScope::global;
  std::size_t top_k_tokens = 10;
  std::size_t svd_stack = 100;
  std::uint64_t seed = 0;
};

struct AnatomyReport {
  AttentionProfile attention;
  OutputProbe probe;
  ValueVectorReport values;
  /// Layer where attention on query+rationale peaks.
  std::size_t peak_attention_layer = 0;
  /// Layer holding the most top value vectors.
  std::size_t peak_value_layer = 0;
  bool peaks_aligned = false;
};

AnatomyReport analyze_anatomy(const TraceSet& set, const AnatomyOptions& options = {});

std::string to_json(const AnatomyReport& report);

}  // namespace ict
