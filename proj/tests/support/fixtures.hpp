#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ict/rng.hpp"
#include "ict/trace.hpp"
#include "ict/tuning.hpp"

namespace ict::testing {

struct TraceSpec {
  std::size_t layers = 3;
  std::size_t hidden = 4;
  std::size_t heads = 2;
  std::size_t vocab = 6;
  std::size_t records = 4;
  std::size_t positions = 2;  // recorded positions per record; the last is the answer
  std::size_t seq_len = 8;    // attended positions (answer token is the last)
  std::size_t paths_per_group = 1;
  std::size_t ffn_rows = 0;   // d_m; 0 omits FFN matrices
  bool attention = true;
  bool gold = true;
};

inline std::vector<float> softmax_row(Rng& rng, std::size_t n) {
  std::vector<float> row(n);
  double total = 0.0;
  std::vector<double> e(n);
  for (std::size_t i = 0; i < n; ++i) total += e[i] = std::exp(rng.normal());
  for (std::size_t i = 0; i < n; ++i) row[i] = static_cast<float>(e[i] / total);
  return row;
}

inline Tensor random_tensor(Rng& rng, std::vector<std::size_t> dims, double scale = 1.0) {
  Tensor t(std::move(dims));
  for (auto& v : t.values()) v = static_cast<float>(scale * rng.normal());
  return t;
}

/// A valid TraceSet with random contents. Segments: context [0, n/3),
/// query [n/3, n/2), rationale [n/2, n-1); the answer token is other.
inline TraceSet random_trace(Rng& rng, const TraceSpec& s) {
  TraceSet set;
  set.model_meta = {s.layers, s.hidden, s.heads, s.vocab};
  for (std::size_t v = 0; v < s.vocab; ++v) set.vocab.push_back("tok" + std::to_string(v));
  set.unembed = random_tensor(rng, {s.vocab, s.hidden});
  set.answer_space = AnswerSpace{{"True", "False"}, {0, 1}};
  if (s.ffn_rows) {
    for (std::size_t l = 0; l < s.layers; ++l) set.ffn_value_matrices.push_back(random_tensor(rng, {s.ffn_rows, s.hidden}));
  }
  for (std::size_t r = 0; r < s.records; ++r) {
    ExampleRecord rec;
    rec.example_id = "r" + std::to_string(r);
    rec.path_group = "g" + std::to_string(r / std::max<std::size_t>(1, s.paths_per_group));
    if (s.gold) rec.gold_label = static_cast<Label>((r / std::max<std::size_t>(1, s.paths_per_group)) % 2);
    rec.hidden_states = random_tensor(rng, {s.positions, s.layers + 1, s.hidden});
    rec.answer_position_index = s.positions - 1;
    if (s.attention) {
      Tensor a({s.layers, s.heads, s.seq_len});
      for (std::size_t l = 0; l < s.layers; ++l) {
        for (std::size_t h = 0; h < s.heads; ++h) {
          const auto row = softmax_row(rng, s.seq_len);
          std::copy(row.begin(), row.end(), a.values().begin() + static_cast<std::ptrdiff_t>((l * s.heads + h) * s.seq_len));
        }
      }
      rec.attention_rows = std::move(a);
      const std::size_t n = s.seq_len;
      rec.segments = SegmentMap{{0, n / 3}, {n / 3, n / 2}, {n / 2, n - 1}};
    }
    set.records.push_back(std::move(rec));
  }
  return set;
}

/// Held-out questions whose agreement bit `informative` equals path
/// correctness while every other bit is a fair coin. With informative past
/// the end, no bit carries signal.
inline std::vector<TuningQuestion> informative_questions(Rng& rng, std::size_t questions, std::size_t paths,
                                                         std::size_t bits, std::size_t informative) {
  std::vector<TuningQuestion> out(questions);
  for (auto& q : out) {
    q.gold = rng.coin() ? kPositiveLabel : kNegativeLabel;
    for (std::size_t k = 0; k < paths; ++k) {
      const bool correct = rng.uniform() < 0.5;
      q.answers.push_back(correct ? q.gold : static_cast<Label>(1 - q.gold));
      AgreementVector a;
      for (std::size_t b = 0; b < bits; ++b) a.bits.push_back(b == informative ? correct : rng.coin());
      q.agreements.push_back(std::move(a));
    }
  }
  return out;
}

}  // namespace ict::testing
