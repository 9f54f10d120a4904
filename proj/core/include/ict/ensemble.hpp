#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ict/consistency.hpp"
#include "ict/lens.hpp"
#include "ict/trace.hpp"

namespace ict {

/// One sampled reasoning path reduced to what answer selection needs.
struct PathRecord {
  std::string path_id;
  Label answer = kPositiveLabel;  // final-layer argmax over the two labels
  LatentPredictionVector latent;
  AgreementVector agreement;
  double ic = 0.0;
  double p_true = 0.0;
  double p_false = 0.0;
  double delta = 0.0;  // top-1 minus top-2 probability over the full vocabulary
};

enum class Method { greedy, sc, sc_delta, sc_ic, sc_ic_tune, sc_ic_transfer };

const char* method_name(Method m);

struct VoteResult {
  Label chosen = kPositiveLabel;
  std::array<double, 2> per_label_mass{};
  double margin = 0.0;  // mass(positive) - mass(negative)
  Method method = Method::sc;
};

enum class DeltaAggregation { sum, mean, max };

// All votes break ties toward label 0.
VoteResult vote_sc(std::span<const PathRecord> paths);
VoteResult vote_sc_ic(std::span<const PathRecord> paths, const LayerWeights* weights = nullptr);
VoteResult vote_sc_delta(std::span<const PathRecord> paths,
                         DeltaAggregation aggregation = DeltaAggregation::sum);
VoteResult vote_greedy(const PathRecord& greedy_path);

/// Accuracy after thresholding margins at their median (positive iff
/// margin >= median), which forces a 50/50 prediction split.
double calibrated_accuracy(std::span<const double> margins, std::span<const Label> golds);

/// Accuracy of the argmax choices themselves.
double raw_accuracy(std::span<const Label> chosen, std::span<const Label> golds);

/// Records whose example_id ends with this suffix are greedy decodes.
inline constexpr std::string_view kGreedySuffix = "/greedy";

struct PathOptions {
  /// Use the raw final-layer answer as y^L instead of the balanced one.
  bool raw_final = false;
  /// Thresholds from another dataset; when null they are fitted on the set.
  const LayerThresholds* thresholds = nullptr;
};

struct QuestionPaths {
  std::string group;
  std::optional<Label> gold;
  std::vector<PathRecord> paths;
  std::optional<PathRecord> greedy;
};

/// Decodes every record, balances per layer, and groups records by path_group
/// in first-appearance order.
std::vector<QuestionPaths> collect_questions(const TraceSet& set, const PathOptions& options = {});

/// Builds one PathRecord from decoded layer scores.
PathRecord make_path_record(const TraceSet& set, const ExampleRecord& record,
                            const LayerLabelScores& scores, const LayerThresholds& thresholds,
                            bool raw_final);

struct MethodScore {
  Method method;
  double raw_accuracy = 0.0;
  double calibrated_accuracy = 0.0;
  std::size_t questions = 0;
};

struct EvaluationOptions {
  /// Paths drawn per question (without replacement); 0 keeps all.
  std::size_t paths_per_question = 0;
  std::uint64_t seed = 0;
  DeltaAggregation delta_aggregation = DeltaAggregation::sum;
  const LayerWeights* tuned = nullptr;
  const LayerWeights* transferred = nullptr;
};

/// Scores each method over questions that carry a gold label. Greedy is
/// scored only when every question has a greedy path.
std::vector<MethodScore> evaluate_methods(std::span<const QuestionPaths> questions,
                                          const EvaluationOptions& options);

}  // namespace ict
