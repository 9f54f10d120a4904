#include "ict/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "ict/rng.hpp"

namespace ict {

namespace {

VoteResult finish(std::array<double, 2> mass, Method method) {
  VoteResult r;
  r.per_label_mass = mass;
  r.chosen = mass[kNegativeLabel] > mass[kPositiveLabel] ? kNegativeLabel : kPositiveLabel;
  r.margin = mass[kPositiveLabel] - mass[kNegativeLabel];
  r.method = method;
  return r;
}

void require_paths(std::span<const PathRecord> paths, const char* who) {
  if (paths.empty()) throw std::invalid_argument(std::string(who) + ": no paths");
}

double median_of(std::vector<double> values) {
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + mid);
  return lower + (upper - lower) / 2.0;
}

// Top-1 minus top-2 probability of the full-vocabulary softmax.
double top_two_gap(std::span<const float> logits) {
  double max_logit = -INFINITY;
  for (float z : logits) max_logit = std::max(max_logit, static_cast<double>(z));
  double total = 0.0, first = 0.0, second = 0.0;
  for (float z : logits) {
    const double e = std::exp(z - max_logit);
    total += e;
    if (e > first) {
      second = first;
      first = e;
    } else if (e > second) {
      second = e;
    }
  }
  return (first - second) / total;
}

}  // namespace

const char* method_name(Method m) {
  switch (m) {
    case Method::greedy: return "Greedy";
    case Method::sc: return "SC";
    case Method::sc_delta: return "SC+Delta";
    case Method::sc_ic: return "SC+IC";
    case Method::sc_ic_tune: return "SC+IC (tune)";
    case Method::sc_ic_transfer: return "SC+IC (transfer)";
  }
  return "?";
}

VoteResult vote_sc(std::span<const PathRecord> paths) {
  require_paths(paths, "vote_sc");
  std::array<double, 2> mass{};
  for (const auto& p : paths) mass[p.answer] += 1.0;
  return finish(mass, Method::sc);
}

VoteResult vote_sc_ic(std::span<const PathRecord> paths, const LayerWeights* weights) {
  require_paths(paths, "vote_sc_ic");
  std::array<double, 2> mass{};
  for (const auto& p : paths) {
    mass[p.answer] += weights ? weighted_consistency(p.agreement, *weights) : p.ic;
  }
  return finish(mass, Method::sc_ic);
}

VoteResult vote_sc_delta(std::span<const PathRecord> paths, DeltaAggregation aggregation) {
  require_paths(paths, "vote_sc_delta");
  std::array<double, 2> mass{};
  std::array<std::size_t, 2> count{};
  for (const auto& p : paths) {
    ++count[p.answer];
    if (aggregation == DeltaAggregation::max) {
      mass[p.answer] = std::max(mass[p.answer], p.delta);
    } else {
      mass[p.answer] += p.delta;
    }
  }
  if (aggregation == DeltaAggregation::mean) {
    for (std::size_t a = 0; a < 2; ++a) {
      if (count[a]) mass[a] /= static_cast<double>(count[a]);
    }
  }
  return finish(mass, Method::sc_delta);
}

VoteResult vote_greedy(const PathRecord& greedy_path) {
  VoteResult r;
  r.chosen = greedy_path.answer;
  r.per_label_mass = {greedy_path.p_true, greedy_path.p_false};
  r.margin = greedy_path.p_true - greedy_path.p_false;
  r.method = Method::greedy;
  return r;
}

double calibrated_accuracy(std::span<const double> margins, std::span<const Label> golds) {
  if (margins.size() != golds.size()) {
    throw std::invalid_argument("calibrated_accuracy: margins and golds differ in length");
  }
  if (margins.size() < 2) throw std::invalid_argument("calibrated_accuracy: need N >= 2");
  const double threshold = median_of({margins.begin(), margins.end()});
  std::size_t hits = 0;
  for (std::size_t i = 0; i < margins.size(); ++i) {
    if (golds[i] > 1) throw std::invalid_argument("calibrated_accuracy: gold label out of range");
    const Label predicted = margins[i] >= threshold ? kPositiveLabel : kNegativeLabel;
    hits += predicted == golds[i];
  }
  return static_cast<double>(hits) / static_cast<double>(margins.size());
}

double raw_accuracy(std::span<const Label> chosen, std::span<const Label> golds) {
  if (chosen.size() != golds.size() || chosen.empty()) {
    throw std::invalid_argument("raw_accuracy: mismatched or empty inputs");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < chosen.size(); ++i) hits += chosen[i] == golds[i];
  return static_cast<double>(hits) / static_cast<double>(chosen.size());
}

PathRecord make_path_record(const TraceSet& set, const ExampleRecord& record,
                            const LayerLabelScores& scores, const LayerThresholds& thresholds,
                            bool raw_final) {
  const std::size_t L = set.model_meta.layers;
  PathRecord p;
  p.path_id = record.example_id;
  p.p_true = scores.raw[L].p_true;
  p.p_false = scores.raw[L].p_false;
  p.answer = scores.normalized_positive[L] >= 0.5 ? kPositiveLabel : kNegativeLabel;
  p.latent = balanced_prediction(scores.normalized_positive, thresholds);
  const Label final_label = raw_final ? p.answer : p.latent.labels[L];
  p.agreement = agreement_vector(p.latent, final_label);
  p.ic = internal_consistency(p.agreement);
  p.delta = top_two_gap(layer_logits(record.answer_hidden(L), set.unembed));
  return p;
}

std::vector<QuestionPaths> collect_questions(const TraceSet& set, const PathOptions& options) {
  std::vector<LayerLabelScores> decoded;
  decoded.reserve(set.records.size());
  for (const auto& rec : set.records) decoded.push_back(decode_layers(set, rec));

  LayerThresholds fitted;
  const LayerThresholds* thresholds = options.thresholds;
  if (!thresholds) {
    std::vector<std::vector<double>> p_hat;
    p_hat.reserve(decoded.size());
    for (const auto& d : decoded) p_hat.push_back(d.normalized_positive);
    fitted = fit_thresholds(p_hat, "transductive");
    thresholds = &fitted;
  }

  std::vector<QuestionPaths> questions;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < set.records.size(); ++i) {
    const auto& rec = set.records[i];
    auto [it, inserted] = index.try_emplace(rec.path_group, questions.size());
    if (inserted) questions.push_back({rec.path_group, rec.gold_label, {}, std::nullopt});
    auto& q = questions[it->second];
    if (!q.gold) q.gold = rec.gold_label;
    auto path = make_path_record(set, rec, decoded[i], *thresholds, options.raw_final);
    if (rec.example_id.ends_with(kGreedySuffix)) {
      q.greedy = std::move(path);
    } else {
      q.paths.push_back(std::move(path));
    }
  }
  return questions;
}

std::vector<MethodScore> evaluate_methods(std::span<const QuestionPaths> questions,
                                          const EvaluationOptions& options) {
  std::vector<const QuestionPaths*> labelled;
  for (const auto& q : questions) {
    if (q.gold && !q.paths.empty()) labelled.push_back(&q);
  }
  if (labelled.size() < 2) throw std::invalid_argument("evaluate_methods: need >= 2 labelled questions");

  const bool have_greedy = std::all_of(labelled.begin(), labelled.end(),
                                       [](const QuestionPaths* q) { return q->greedy.has_value(); });
  std::vector<Method> methods;
  if (have_greedy) methods.push_back(Method::greedy);
  methods.insert(methods.end(), {Method::sc, Method::sc_delta, Method::sc_ic});
  if (options.tuned) methods.push_back(Method::sc_ic_tune);
  if (options.transferred) methods.push_back(Method::sc_ic_transfer);

  std::vector<std::vector<double>> margins(methods.size());
  std::vector<std::vector<Label>> chosen(methods.size());
  std::vector<Label> golds;

  Rng rng(options.seed);
  std::vector<PathRecord> subset;
  for (const auto* q : labelled) {
    golds.push_back(*q->gold);
    subset.assign(q->paths.begin(), q->paths.end());
    if (options.paths_per_question && subset.size() > options.paths_per_question) {
      rng.shuffle(std::span<PathRecord>(subset));
      subset.resize(options.paths_per_question);
    }
    for (std::size_t m = 0; m < methods.size(); ++m) {
      VoteResult r;
      switch (methods[m]) {
        case Method::greedy: r = vote_greedy(*q->greedy); break;
        case Method::sc: r = vote_sc(subset); break;
        case Method::sc_delta: r = vote_sc_delta(subset, options.delta_aggregation); break;
        case Method::sc_ic: r = vote_sc_ic(subset); break;
        case Method::sc_ic_tune: r = vote_sc_ic(subset, options.tuned); break;
        case Method::sc_ic_transfer: r = vote_sc_ic(subset, options.transferred); break;
      }
      margins[m].push_back(r.margin);
      chosen[m].push_back(r.chosen);
    }
  }

  std::vector<MethodScore> out;
  for (std::size_t m = 0; m < methods.size(); ++m) {
    out.push_back({methods[m], raw_accuracy(chosen[m], golds), calibrated_accuracy(margins[m], golds),
                   golds.size()});
  }
  return out;
}

}  // namespace ict
