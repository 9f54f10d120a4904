#include <algorithm>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "ict/toymodel.hpp"

namespace ict::toy {

const std::vector<std::string>& CoinVocab::strings() {
  static const std::vector<std::string> tokens = {
      "<bos>", "coin", "heads", "tails", ".",   "flips", "keeps", "?",   "A:",  "True",
      "False", "Ann",  "Bob",   "Cid",   "Dee", "Eve",   "Fay",   "Gus", "Hal", "<pad>"};
  return tokens;
}

AnswerSpace CoinVocab::answer_space() {
  return AnswerSpace{{"True", "False"}, {CoinVocab::yes, CoinVocab::no}};
}

SegmentMap Question::segments(std::size_t rationale_end) const {
  const std::size_t context_end = 1 + 3 * clauses;
  return SegmentMap{{1, context_end}, {context_end, prompt_length}, {prompt_length, rationale_end}};
}

const char* layout_name(Layout layout) {
  switch (layout) {
    case Layout::direct: return "direct";
    case Layout::rationale: return "rationale";
    case Layout::mixed: return "mixed";
  }
  return "direct";
}

Layout parse_layout(const std::string& name) {
  if (name == "direct") return Layout::direct;
  if (name == "rationale") return Layout::rationale;
  if (name == "mixed") return Layout::mixed;
  throw std::invalid_argument("unknown layout: " + name);
}

SyntheticTask gen_task(std::uint64_t seed, std::size_t n_questions, std::size_t max_flips,
                       std::size_t max_clauses, Layout layout) {
  if (layout == Layout::mixed) {
    if (n_questions < 4) throw std::invalid_argument("gen_task: mixed layout needs at least 4 questions");
    auto task = gen_task(seed, n_questions - n_questions / 2, max_flips, max_clauses, Layout::direct);
    auto with = gen_task(seed + 1, n_questions / 2, max_flips, max_clauses, Layout::rationale);
    task.questions.insert(task.questions.end(), std::make_move_iterator(with.questions.begin()),
                          std::make_move_iterator(with.questions.end()));
    task.seed = seed;
    task.layout = Layout::mixed;
    return task;
  }
  const bool rationale = layout == Layout::rationale;
  if (n_questions < 2) throw std::invalid_argument("gen_task: need at least 2 questions");
  if (max_clauses == 0) max_clauses = CoinVocab::name_count;
  if (max_clauses > CoinVocab::name_count) {
    throw std::invalid_argument("gen_task: at most " + std::to_string(CoinVocab::name_count) +
                                " clauses (one per name)");
  }

  SyntheticTask task;
  task.max_flips = max_flips;
  task.max_clauses = max_clauses;
  task.seed = seed;
  task.layout = layout;
  Rng rng(seed);

  for (std::size_t q = 0; q < n_questions; ++q) {
    Question question;
    const bool want_heads = max_flips == 0 || q % 2 == 0;
    const std::size_t k = 1 + rng.below(max_clauses);
    const std::size_t flip_cap = std::min(k, max_flips);
    std::vector<std::size_t> options;
    for (std::size_t f = 0; f <= flip_cap; ++f) {
      if ((f % 2 == 0) == want_heads) options.push_back(f);
    }
    const std::size_t flips = options[rng.below(options.size())];

    std::vector<std::uint8_t> flipped(k, 0);
    std::fill(flipped.begin(), flipped.begin() + static_cast<std::ptrdiff_t>(flips), 1);
    rng.shuffle(std::span<std::uint8_t>(flipped));
    std::vector<Token> names(CoinVocab::name_count);
    std::iota(names.begin(), names.end(), CoinVocab::first_name);
    rng.shuffle(std::span<Token>(names));

    auto& t = question.tokens;
    t.push_back(CoinVocab::bos);
    for (std::size_t c = 0; c < k; ++c) {
      t.insert(t.end(), {names[c], flipped[c] ? CoinVocab::flips : CoinVocab::keeps, CoinVocab::period});
      if (!rationale) question.step_positions.push_back(t.size() - 1);
    }
    t.insert(t.end(), {CoinVocab::coin, CoinVocab::heads, CoinVocab::question});
    if (!rationale) t.push_back(CoinVocab::answer_slot);
    question.prompt_length = t.size();

    bool heads = true;
    for (std::size_t c = 0; c < k; ++c) {
      if (flipped[c]) heads = !heads;
      if (rationale) {
        t.insert(t.end(), {names[c], heads ? CoinVocab::heads : CoinVocab::tails, CoinVocab::period});
        question.step_positions.push_back(t.size() - 1);
      }
    }
    if (rationale) t.push_back(CoinVocab::answer_slot);
    question.answer_slot = t.size() - 1;
    t.push_back(heads ? CoinVocab::yes : CoinVocab::no);

    question.clauses = k;
    question.flip_count = flips;
    question.gold = heads ? kPositiveLabel : kNegativeLabel;
    task.questions.push_back(std::move(question));
  }
  return task;
}

std::string task_to_json(const SyntheticTask& task) {
  using nlohmann::json;
  json doc;
  doc["seed"] = task.seed;
  doc["max_flips"] = task.max_flips;
  doc["max_clauses"] = task.max_clauses;
  doc["layout"] = layout_name(task.layout);
  doc["vocab"] = CoinVocab::strings();
  auto questions = json::array();
  for (const auto& q : task.questions) {
    questions.push_back({{"tokens", q.tokens},
                         {"prompt_length", q.prompt_length},
                         {"clauses", q.clauses},
                         {"flip_count", q.flip_count},
                         {"step_positions", q.step_positions},
                         {"answer_slot", q.answer_slot},
                         {"gold", q.gold}});
  }
  doc["questions"] = std::move(questions);
  return doc.dump() + "\n";
}

SyntheticTask task_from_json(const std::string& text) {
  using nlohmann::json;
  SyntheticTask task;
  try {
    const auto doc = json::parse(text);
    task.seed = doc.at("seed").get<std::uint64_t>();
    task.max_flips = doc.at("max_flips").get<std::size_t>();
    task.max_clauses = doc.at("max_clauses").get<std::size_t>();
    task.layout = parse_layout(doc.value("layout", std::string("direct")));
    for (const auto& j : doc.at("questions")) {
      Question q;
      q.tokens = j.at("tokens").get<std::vector<Token>>();
      q.prompt_length = j.at("prompt_length").get<std::size_t>();
      q.clauses = j.at("clauses").get<std::size_t>();
      q.flip_count = j.at("flip_count").get<std::size_t>();
      q.step_positions = j.at("step_positions").get<std::vector<std::size_t>>();
      q.answer_slot = j.at("answer_slot").get<std::size_t>();
      q.gold = j.at("gold").get<Label>();
      if (q.prompt_length > q.tokens.size() || q.answer_slot >= q.tokens.size()) {
        throw std::runtime_error("task JSON: question positions outside its tokens");
      }
      task.questions.push_back(std::move(q));
    }
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("task JSON: ") + e.what());
  }
  return task;
}

}  // namespace ict::toy
