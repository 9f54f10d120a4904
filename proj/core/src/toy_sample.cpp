#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ict/parallel.hpp"
#include "toy_internal.hpp"

namespace ict::toy {

namespace {

bool is_answer(Token t) { return t == CoinVocab::yes || t == CoinVocab::no; }

Token argmax(std::span<const float> logits) {
  return static_cast<Token>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

}  // namespace

Token sample_nucleus(std::span<const float> logits, double temperature, double top_p, Rng& rng) {
  if (logits.empty()) throw std::invalid_argument("sample_nucleus: empty logits");
  if (temperature <= 0.0) return argmax(logits);

  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> prob(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    prob[i] = std::exp((logits[i] - top) / temperature);
    total += prob[i];
  }
  std::vector<std::size_t> order(logits.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return prob[a] > prob[b]; });

  // Smallest prefix whose mass reaches top_p.
  std::size_t keep = 0;
  double kept = 0.0;
  while (keep < order.size()) {
    kept += prob[order[keep++]] / total;
    if (kept >= top_p) break;
  }
  double mass = 0.0;
  for (std::size_t i = 0; i < keep; ++i) mass += prob[order[i]];
  double u = rng.uniform() * mass;
  for (std::size_t i = 0; i < keep; ++i) {
    u -= prob[order[i]];
    if (u < 0.0) return static_cast<Token>(order[i]);
  }
  return static_cast<Token>(order[keep - 1]);
}

std::vector<std::vector<Token>> sample_paths(const ToyParams& params, std::span<const Token> prompt,
                                             std::size_t n_paths, const SamplingOptions& options) {
  if (n_paths == 0) throw std::invalid_argument("sample_paths: n_paths must be at least 1");
  if (prompt.empty() || prompt.size() > params.config.max_seq) {
    throw std::invalid_argument("sample_paths: prompt length " + std::to_string(prompt.size()) +
                                " outside [1, max_seq]");
  }
  std::vector<std::vector<Token>> paths(n_paths);
  parallel_for(n_paths, [&](std::size_t k) {
    Rng rng(derive_seed(options.seed, k));
    std::vector<Token> seq(prompt.begin(), prompt.end());
    while (seq.size() < params.config.max_seq) {
      const auto logits = forward_with_trace(seq, params).logits;
      const Token next = options.greedy ? argmax(logits)
                                        : sample_nucleus(logits, options.temperature, options.top_p, rng);
      seq.push_back(next);
      if (is_answer(next)) break;
    }
    paths[k] = std::move(seq);
  });
  return paths;
}

ExampleRecord record_for_sequence(const ToyParams& params, const Question& question,
                                  std::span<const Token> sequence, const std::string& example_id,
                                  const std::string& group, bool with_attention) {
  if (sequence.size() <= question.prompt_length) {
    throw std::invalid_argument("record_for_sequence: sequence has no completion");
  }
  // The answer slot is the position whose next-token prediction is the answer.
  const std::size_t slot = is_answer(sequence.back()) ? sequence.size() - 2 : sequence.size() - 1;

  ForwardRequest request;
  for (auto p : question.step_positions) {
    if (p < question.prompt_length) request.record_positions.push_back(p);
  }
  for (std::size_t p = question.prompt_length; p < slot; ++p) {
    if (sequence[p] == CoinVocab::period) request.record_positions.push_back(p);
  }
  request.record_positions.push_back(slot);
  if (with_attention) request.attention_from = slot;

  auto trace = forward_with_trace(sequence.first(slot + 1), params, request);
  ExampleRecord rec;
  rec.example_id = example_id;
  rec.path_group = group;
  rec.gold_label = question.gold;
  rec.hidden_states = std::move(trace.hidden);
  rec.answer_position_index = request.record_positions.size() - 1;
  if (with_attention) {
    rec.attention_rows = std::move(trace.attention);
    rec.segments = question.segments(std::max(slot, question.prompt_length));
  }
  return rec;
}

TraceSet sample_trace(const ToyParams& params, const SyntheticTask& task, const TraceOptions& options) {
  const auto& cfg = params.config;
  TraceSet set;
  set.model_meta = {cfg.layers, cfg.hidden, cfg.heads, cfg.vocab};
  set.vocab = CoinVocab::strings();
  set.vocab.resize(cfg.vocab);
  set.unembed = params.unembed;
  set.answer_space = CoinVocab::answer_space();
  if (options.ffn) {
    for (const auto& b : params.blocks) set.ffn_value_matrices.push_back(b.ffn_value);
  }

  const std::size_t per_question = options.paths_per_question + (options.include_greedy ? 1 : 0);
  std::vector<ExampleRecord> records(task.questions.size() * per_question);
  parallel_for(task.questions.size(), [&](std::size_t qi) {
    const auto& q = task.questions[qi];
    const std::string group = "q" + std::to_string(qi);
    std::size_t slot = qi * per_question;
    SamplingOptions sampling = options.sampling;
    sampling.seed = derive_seed(options.sampling.seed, qi);
    if (options.include_greedy) {
      SamplingOptions greedy = sampling;
      greedy.greedy = true;
      const auto path = sample_paths(params, q.prompt(), 1, greedy).front();
      records[slot++] = record_for_sequence(params, q, path, group + "/greedy", group, options.attention);
    }
    if (options.paths_per_question > 0) {
      const auto paths = sample_paths(params, q.prompt(), options.paths_per_question, sampling);
      for (std::size_t k = 0; k < paths.size(); ++k) {
        records[slot++] = record_for_sequence(params, q, paths[k], group + "/p" + std::to_string(k), group,
                                              options.attention);
      }
    }
  });
  set.records = std::move(records);
  return set;
}

}  // namespace ict::toy
