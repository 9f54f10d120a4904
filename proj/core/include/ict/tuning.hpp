#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ict/consistency.hpp"
#include "ict/ensemble.hpp"
#include "ict/layer_weights.hpp"

namespace ict {

struct TuneConfig {
  double lr = 0.01;
  std::size_t iterations = 1000;
  std::size_t n_heldout = 500;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Strength of the pull toward the uniform initialization.
  double l2 = 0.0;
  std::string source_dataset;
};

/// A held-out question reduced to its paths' answers and agreement vectors.
struct TuningQuestion {
  Label gold = kPositiveLabel;
  std::vector<Label> answers;
  std::vector<AgreementVector> agreements;
};

std::vector<TuningQuestion> tuning_questions(std::span<const QuestionPaths> questions);

/// Mean softmax cross-entropy of the per-label weighted-consistency sums
/// against gold, plus l2 * ||w - w0||^2. Fills grad when non-null.
double surrogate_loss(std::span<const TuningQuestion> questions, std::span<const double> w,
                      double l2, std::vector<double>* grad = nullptr);

/// Full-batch Adam from w0 = uniform. When more than n_heldout questions are
/// supplied, a seed-determined subset of n_heldout is used.
/// Returns the lowest-loss iterate seen, w0 included.
LayerWeights tune_weights(std::span<const TuningQuestion> questions, const TuneConfig& cfg);

/// The subset tune_weights trains on, in its summation order.
std::vector<TuningQuestion> select_heldout(std::span<const TuningQuestion> questions,
                                           const TuneConfig& cfg);

/// SC+IC with fixed weights on another evaluation set. Throws when the
/// weight length does not match the target's intermediate layer count.
std::vector<VoteResult> apply_transfer(const LayerWeights& weights,
                                       std::span<const QuestionPaths> target);

}  // namespace ict
