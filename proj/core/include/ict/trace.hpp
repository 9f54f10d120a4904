#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ict/tensor.hpp"

namespace ict {

using Label = std::uint8_t;

inline constexpr Label kPositiveLabel = 0;
inline constexpr Label kNegativeLabel = 1;

struct ModelMeta {
  std::size_t layers = 0;  // L: residual blocks
  std::size_t hidden = 0;  // d
  std::size_t heads = 0;   // H
  std::size_t vocab = 0;   // V

  friend bool operator==(const ModelMeta&, const ModelMeta&) = default;
};

/// The two single-token answers. Index 0 is the positive label.
struct AnswerSpace {
  std::array<std::string, 2> labels;
  std::array<std::size_t, 2> token_ids{};

  friend bool operator==(const AnswerSpace&, const AnswerSpace&) = default;
};

enum class Segment : std::uint8_t { context = 0, query = 1, rationale = 2, other = 3 };
inline constexpr std::size_t kSegmentCount = 4;

const char* segment_name(Segment s);

/// Half-open range of token positions.
struct PositionRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  bool contains(std::size_t p) const noexcept { return p >= begin && p < end; }
  bool empty() const noexcept { return end <= begin; }

  friend bool operator==(const PositionRange&, const PositionRange&) = default;
};

/// Partition of the positions an answer token attends to. Context, query and
/// rationale are explicit ranges; every other position (preamble, separators,
/// the answer slot itself) falls in Segment::other.
struct SegmentMap {
  PositionRange context;
  PositionRange query;
  PositionRange rationale;

  Segment bucket_of(std::size_t position) const noexcept;

  friend bool operator==(const SegmentMap&, const SegmentMap&) = default;
};

struct ExampleRecord {
  std::string example_id;
  std::optional<Label> gold_label;
  /// [num_positions x L+1 x d]; layer 0 is the embedding output.
  Tensor hidden_states;
  std::size_t answer_position_index = 0;
  /// [L x H x seq_len], attention from the answer token to each position.
  std::optional<Tensor> attention_rows;
  std::optional<SegmentMap> segments;
  std::string path_group;

  std::size_t num_positions() const { return hidden_states.rank() ? hidden_states.dim(0) : 0; }
  std::span<const float> hidden_at(std::size_t position, std::size_t layer) const {
    return hidden_states.row(position, layer);
  }
  std::span<const float> answer_hidden(std::size_t layer) const {
    return hidden_at(answer_position_index, layer);
  }

  friend bool operator==(const ExampleRecord&, const ExampleRecord&) = default;
};

struct TraceSet {
  ModelMeta model_meta;
  std::vector<std::string> vocab;
  Tensor unembed;  // [V x d]
  AnswerSpace answer_space;
  std::vector<ExampleRecord> records;
  /// Empty, or one [d_m x d] matrix per layer whose rows are the value vectors.
  std::vector<Tensor> ffn_value_matrices;

  friend bool operator==(const TraceSet&, const TraceSet&) = default;
};

struct Violation {
  std::string record_id;  // empty for set-level fields
  std::string field;
  std::string message;
};

std::string to_string(const Violation& v);

/// Every violated invariant yields one entry; an empty result means valid.
std::vector<Violation> validate_trace(const TraceSet& set);

class TraceError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, malformed_header, truncated, dimension_mismatch, validation };

  TraceError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

inline constexpr char kTraceMagic[] = "ICT1";

/// Writes the ICT1 container. Validates first; nothing is written on failure.
std::size_t write_trace(const TraceSet& set, std::ostream& sink);
void write_trace_file(const TraceSet& set, const std::string& path);

struct ReadOptions {
  /// When false the structurally-decoded set is returned even if it violates
  /// semantic invariants, so callers can list the violations.
  bool validate = true;
};

TraceSet read_trace(std::istream& source, ReadOptions options = {});
TraceSet read_trace_file(const std::string& path, ReadOptions options = {});

}  // namespace ict
