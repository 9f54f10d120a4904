#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ict/rng.hpp"
#include "ict/tensor.hpp"
#include "ict/trace.hpp"

namespace ict::toy {

using Token = std::uint32_t;

struct ToyConfig {
  std::size_t layers = 4;
  std::size_t hidden = 32;
  std::size_t heads = 4;
  std::size_t ffn = 64;  // d_m
  std::size_t vocab = 20;
  std::size_t max_seq = 64;
  /// LayerNorm on the MHSA and FFN inputs. Off reproduces the bare residual
  /// update h' = h + FFN(h + MHSA(h)).
  bool pre_norm = false;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument when d % H != 0 or any size is zero.
  void validate() const;
  friend bool operator==(const ToyConfig&, const ToyConfig&) = default;
};

/// All linear maps use y = W x, so W is [out x in].
struct BlockParams {
  Tensor query, key, value, output;  // [d x d]
  Tensor ffn_key;                    // W_K [d_m x d]
  Tensor ffn_value;                  // W_V [d_m x d]; row i is value vector v_i
  Tensor norm1_gain, norm1_bias;     // [d], pre_norm only
  Tensor norm2_gain, norm2_bias;

  friend bool operator==(const BlockParams&, const BlockParams&) = default;
};

struct ToyParams {
  ToyConfig config;
  Tensor token_embedding;     // [V x d]
  Tensor position_embedding;  // [max_seq x d]
  std::vector<BlockParams> blocks;
  Tensor unembed;             // [V x d]
  double train_accuracy = 0.0;

  /// Seeded initialization from config.seed.
  static ToyParams init(const ToyConfig& config);
  /// Same shapes, every entry zero.
  static ToyParams zeros_like(const ToyParams& other);

  /// Zeroes every residual-branch weight so h^l = h^0 for all l.
  void zero_blocks();

  /// Every parameter tensor in a fixed order (optimizer state follows it).
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;

  friend bool operator==(const ToyParams&, const ToyParams&) = default;
};

inline constexpr char kToyParamsMagic[] = "TOYP";

void write_toy_params(const ToyParams& params, std::ostream& sink);
ToyParams read_toy_params(std::istream& source);
void save_toy_params(const ToyParams& params, const std::string& path);
ToyParams load_toy_params(const std::string& path);

struct ForwardRequest {
  /// Positions whose hidden states h^0..h^L are recorded.
  std::vector<std::size_t> record_positions;
  /// Position whose attention rows are recorded (all layers and heads).
  std::optional<std::size_t> attention_from;
};

struct ForwardTrace {
  std::vector<float> logits;  // next-token logits at the last input position
  Tensor hidden;              // [record_positions x L+1 x d]
  std::optional<Tensor> attention;  // [L x H x attention_from+1]
};

/// Throws std::invalid_argument for an empty input, a token outside the
/// vocabulary, or a sequence longer than max_seq.
ForwardTrace forward_with_trace(std::span<const Token> tokens, const ToyParams& params,
                                const ForwardRequest& request = {});

// ---------------------------------------------------------------------------
// Synthetic coin-flip task

/// Fixed 20-token vocabulary of the coin task.
struct CoinVocab {
  static constexpr Token bos = 0, coin = 1, heads = 2, tails = 3, period = 4, flips = 5,
                         keeps = 6, question = 7, answer_slot = 8, yes = 9, no = 10,
                         first_name = 11, pad = 19;
  static constexpr std::size_t name_count = 8;
  static constexpr std::size_t size = 20;

  static const std::vector<std::string>& strings();
  static AnswerSpace answer_space();
};

/// One question with its reference completion.
///
/// Layout with a rationale:
///   <bos> [NAME flips|keeps .]*k coin heads ? [NAME heads|tails .]*k A: True|False
/// The prompt ends at "?"; the completion tracks the coin state clause by
/// clause. Without a rationale the prompt ends at "A:" and the steps are the
/// "." ending each flip clause. Gold is True iff the number of flips is even.
struct Question {
  std::vector<Token> tokens;  // prompt + rationale + answer slot + answer
  std::size_t prompt_length = 0;
  std::size_t clauses = 0;
  std::size_t flip_count = 0;
  std::vector<std::size_t> step_positions;  // "." ending each step
  std::size_t answer_slot = 0;              // position of "A:"
  Label gold = kPositiveLabel;

  std::span<const Token> prompt() const { return std::span(tokens).first(prompt_length); }
  /// Context = clauses, query = "coin heads ?", rationale from the prompt end.
  SegmentMap segments(std::size_t rationale_end) const;
};

/// direct: no rationale. mixed: the first n - n/2 questions are direct (seed),
/// the rest carry a rationale (seed + 1).
enum class Layout { direct, rationale, mixed };

const char* layout_name(Layout layout);
Layout parse_layout(const std::string& name);

struct SyntheticTask {
  std::vector<Question> questions;
  std::size_t max_flips = 0;
  std::size_t max_clauses = 0;
  std::uint64_t seed = 0;
  Layout layout = Layout::direct;
};

/// Labels alternate so the split is balanced within one; clause count is
/// uniform in [1, max_clauses] (default: one per name). Requires
/// n_questions >= 2.
SyntheticTask gen_task(std::uint64_t seed, std::size_t n_questions, std::size_t max_flips,
                       std::size_t max_clauses = 0, Layout layout = Layout::direct);

std::string task_to_json(const SyntheticTask& task);
SyntheticTask task_from_json(const std::string& text);

// ---------------------------------------------------------------------------
// Training

struct TrainOptions {
  std::size_t steps = 2000;
  double lr = 1e-3;
  std::size_t batch_size = 16;
  double clip_norm = 1.0;
  /// Only the answer position contributes to the loss; otherwise the whole
  /// completion (rationale, answer slot and answer) does.
  bool answer_only = true;
};

struct TrainReport {
  std::vector<double> losses;  // per step, before the update
  double train_accuracy = 0.0;
};

/// Adam (0.9, 0.999, 1e-8) on next-token cross-entropy with seeded batch
/// order. Throws std::runtime_error with diagnostics if the loss goes
/// non-finite.
ToyParams train_toy(const SyntheticTask& task, const ToyConfig& config, const TrainOptions& options,
                    TrainReport* report = nullptr);

/// Mean next-token loss over the given questions' completions.
double completion_loss(const ToyParams& params, const SyntheticTask& task,
                       std::span<const std::size_t> questions, bool answer_only = false);

/// Loss and its gradient for one question (used by gradient checks).
double loss_and_gradient(const ToyParams& params, const Question& question, bool answer_only,
                         ToyParams& gradient);

/// Teacher-forced accuracy of the two-label argmax at the answer slot.
double answer_accuracy(const ToyParams& params, const SyntheticTask& task);

// ---------------------------------------------------------------------------
// Sampling

struct SamplingOptions {
  double temperature = 0.7;
  double top_p = 0.95;
  /// Argmax decoding (the temperature -> 0 limit).
  bool greedy = false;
  std::uint64_t seed = 0;
};

/// Nucleus sampling: scale logits by 1/temperature, keep the smallest
/// descending-probability prefix whose mass reaches top_p, renormalize, draw.
Token sample_nucleus(std::span<const float> logits, double temperature, double top_p, Rng& rng);

/// Continues prompt until an answer token or max_seq; path k draws from the
/// stream derive_seed(seed, k). Returns full sequences including the prompt.
std::vector<std::vector<Token>> sample_paths(const ToyParams& params, std::span<const Token> prompt,
                                             std::size_t n_paths, const SamplingOptions& options);

struct TraceOptions {
  std::size_t paths_per_question = 20;
  bool include_greedy = true;
  bool attention = true;
  bool ffn = true;
  SamplingOptions sampling;
};

/// Builds the trace record for one generated sequence (prompt + completion):
/// hidden states at prompt and rationale step ends and the answer slot, attention rows
/// from the answer slot, and the segment map.
ExampleRecord record_for_sequence(const ToyParams& params, const Question& question,
                                  std::span<const Token> sequence, const std::string& example_id,
                                  const std::string& group, bool with_attention);

/// Samples paths for every question and packages them as an ICT1 trace set.
/// Greedy records carry the id suffix "/greedy".
TraceSet sample_trace(const ToyParams& params, const SyntheticTask& task, const TraceOptions& options);

}  // namespace ict::toy
