#include "ict/anatomy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <regex>
#include <stdexcept>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ict/lens.hpp"
#include "ict/rng.hpp"

namespace ict {

namespace {

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Decodes one UTF-8 code point; returns false on a malformed sequence.
bool next_code_point(std::string_view s, std::size_t& i, char32_t& cp) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  std::size_t len = b0 < 0x80 ? 1 : (b0 >> 5) == 0x6 ? 2 : (b0 >> 4) == 0xE ? 3 : (b0 >> 3) == 0x1E ? 4 : 0;
  if (len == 0 || i + len > s.size()) return false;
  cp = len == 1 ? b0 : len == 2 ? (b0 & 0x1F) : len == 3 ? (b0 & 0x0F) : (b0 & 0x07);
  for (std::size_t k = 1; k < len; ++k) {
    const auto b = static_cast<unsigned char>(s[i + k]);
    if ((b >> 6) != 0x2) return false;
    cp = (cp << 6) | (b & 0x3F);
  }
  i += len;
  return true;
}

bool printable(char32_t cp) {
  if (cp < 0x20 || (cp >= 0x7F && cp <= 0x9F)) return false;
  if (cp == 0xFFFD || (cp >= 0xE000 && cp <= 0xF8FF)) return false;
  return true;
}

}  // namespace

AttentionProfile attention_score(const ExampleRecord& record) {
  if (!record.attention_rows) {
    throw std::invalid_argument("attention_score: record " + record.example_id + " has no attention rows");
  }
  if (!record.segments) {
    throw std::invalid_argument("attention_score: record " + record.example_id + " has no segment map");
  }
  const auto& att = *record.attention_rows;
  const auto& seg = *record.segments;
  const std::size_t layers = att.dim(0), heads = att.dim(1), seq = att.dim(2);
  for (const auto* r : {&seg.context, &seg.query, &seg.rationale}) {
    if (r->end < r->begin || r->end > seq) {
      throw std::invalid_argument("attention_score: segments do not partition the attention row");
    }
  }
  const auto overlap = [](const auto& a, const auto& b) {
    return a.begin < a.end && b.begin < b.end && a.begin < b.end && b.begin < a.end;
  };
  if (overlap(seg.context, seg.query) || overlap(seg.context, seg.rationale) || overlap(seg.query, seg.rationale)) {
    throw std::invalid_argument("attention_score: segments overlap");
  }

  std::vector<Segment> bucket(seq);
  for (std::size_t i = 0; i < seq; ++i) bucket[i] = seg.bucket_of(i);

  AttentionProfile profile;
  profile.scores.resize(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    std::array<double, kSegmentCount> mass{};
    for (std::size_t h = 0; h < heads; ++h) {
      const auto row = att.row(l, h);
      for (std::size_t i = 0; i < seq; ++i) mass[static_cast<std::size_t>(bucket[i])] += row[i];
    }
    for (auto& m : mass) m /= static_cast<double>(heads);
    profile.scores[l] = mass;
  }
  return profile;
}

AttentionProfile mean_attention_profile(const TraceSet& set) {
  AttentionProfile mean;
  std::size_t count = 0;
  for (const auto& rec : set.records) {
    if (!rec.attention_rows || !rec.segments) continue;
    const auto p = attention_score(rec);
    if (mean.scores.empty()) mean.scores.assign(p.scores.size(), {});
    for (std::size_t l = 0; l < p.scores.size(); ++l) {
      for (std::size_t b = 0; b < kSegmentCount; ++b) mean.scores[l][b] += p.scores[l][b];
    }
    ++count;
  }
  if (count == 0) throw std::invalid_argument("mean_attention_profile: no record carries attention and segments");
  for (auto& row : mean.scores) {
    for (auto& v : row) v /= static_cast<double>(count);
  }
  return mean;
}

OutputProbe fit_output_probe(const Tensor& last_hidden, std::span<const Label> model_outputs,
                             std::span<const double> l2_grid, std::uint64_t seed) {
  if (last_hidden.rank() != 2 || last_hidden.dim(0) != model_outputs.size()) {
    throw std::invalid_argument("fit_output_probe: hidden states must be [N x d] with N outputs");
  }
  const std::size_t n = model_outputs.size();
  const auto positives = static_cast<std::size_t>(std::count(model_outputs.begin(), model_outputs.end(), Label{1}));
  if (positives == 0 || positives == n) throw std::invalid_argument("fit_output_probe: single-class outputs");
  if (n < 5) throw std::invalid_argument("fit_output_probe: need at least 5 rows for 5-fold CV");

  std::vector<double> grid = l2_grid.empty() ? default_l2_grid() : std::vector<double>(l2_grid.begin(), l2_grid.end());
  std::sort(grid.begin(), grid.end());

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  constexpr std::size_t kFolds = 5;

  OutputProbe best;
  best.cv_accuracy = -1.0;
  for (double l2 : grid) {
    LogisticOptions opts;
    opts.l2 = l2;
    opts.fit_intercept = false;
    std::size_t hits = 0;
    for (std::size_t f = 0; f < kFolds; ++f) {
      std::vector<std::size_t> train, test;
      for (std::size_t i = 0; i < n; ++i) (i % kFolds == f ? test : train).push_back(order[i]);
      const auto model = fit_logistic(last_hidden, model_outputs, train, opts);
      for (auto r : test) hits += model.predict(last_hidden.row(r)) == model_outputs[r];
    }
    const double acc = static_cast<double>(hits) / static_cast<double>(n);
    if (acc > best.cv_accuracy) {
      best.cv_accuracy = acc;
      best.l2 = l2;
    }
  }

  LogisticOptions opts;
  opts.l2 = best.l2;
  opts.fit_intercept = false;
  const auto model = fit_logistic(last_hidden, model_outputs, {}, opts);
  best.w_probe = model.weights;
  best.train_accuracy = accuracy(model, last_hidden, model_outputs, order);
  return best;
}

std::vector<TopVector> rank_value_vectors(std::span<const Tensor> ffn_value_matrices,
                                          std::span<const double> probe,
                                          std::vector<TopVector>* zero_norm) {
  const double probe_norm = norm(probe);
  if (probe_norm == 0.0) throw std::invalid_argument("value_vector_similarity: zero-norm probe vector");
  std::vector<TopVector> ranked;
  for (std::size_t l = 0; l < ffn_value_matrices.size(); ++l) {
    const auto& m = ffn_value_matrices[l];
    if (m.rank() != 2 || m.dim(1) != probe.size()) {
      throw std::invalid_argument("value_vector_similarity: value matrix " + format_dims(m.dims()) +
                                  " incompatible with probe of size " + std::to_string(probe.size()));
    }
    for (std::size_t i = 0; i < m.dim(0); ++i) {
      const auto v = m.row(i);
      double dot = 0.0, vv = 0.0;
      for (std::size_t k = 0; k < v.size(); ++k) {
        dot += v[k] * probe[k];
        vv += static_cast<double>(v[k]) * v[k];
      }
      if (vv == 0.0) {
        if (zero_norm) zero_norm->push_back({l, i, 0.0});
        continue;
      }
      const double c = std::clamp(dot / (std::sqrt(vv) * probe_norm), -1.0, 1.0);
      ranked.push_back({l, i, c});
    }
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const TopVector& a, const TopVector& b) {
    if (a.cosine != b.cosine) return a.cosine > b.cosine;
    return a.layer != b.layer ? a.layer < b.layer : a.index < b.index;
  });
  return ranked;
}

ValueVectorReport value_vector_similarity(std::span<const Tensor> ffn_value_matrices,
                                          const OutputProbe& probe, TopScope scope) {
  if (ffn_value_matrices.empty()) throw std::invalid_argument("value_vector_similarity: no FFN payload");
  ValueVectorReport report;
  auto ranked = rank_value_vectors(ffn_value_matrices, probe.w_probe, &report.zero_norm);

  const std::size_t layers = ffn_value_matrices.size();
  const std::size_t total = layers * ffn_value_matrices.front().dim(0);
  const auto quota = static_cast<std::size_t>(std::ceil(0.001 * static_cast<double>(total) - 1e-9));
  report.per_layer_top_counts.assign(layers, 0);

  if (scope == TopScope::global) {
    for (std::size_t i = 0; i < std::min(quota, ranked.size()); ++i) report.top_vectors.push_back(ranked[i]);
  } else {
    const auto per_layer = static_cast<std::size_t>(
        std::ceil(0.001 * static_cast<double>(ffn_value_matrices.front().dim(0)) - 1e-9));
    std::vector<std::size_t> taken(layers, 0);
    for (const auto& t : ranked) {
      if (taken[t.layer] < per_layer) {
        ++taken[t.layer];
        report.top_vectors.push_back(t);
      }
    }
  }
  for (const auto& t : report.top_vectors) ++report.per_layer_top_counts[t.layer];

  const std::size_t stack_size = std::min<std::size_t>(100, ranked.size());
  if (stack_size >= 2) {
    std::vector<std::vector<double>> stack;
    for (std::size_t i = 0; i < stack_size; ++i) {
      const auto row = ffn_value_matrices[ranked[i].layer].row(ranked[i].index);
      stack.emplace_back(row.begin(), row.end());
    }
    report.top_singular_vector = top_singular_vector(stack);
  }
  return report;
}

std::vector<double> top_singular_vector(std::span<const std::vector<double>> stack) {
  if (stack.size() < 2) throw std::invalid_argument("top_singular_vector: need at least 2 vectors");
  const auto rows = static_cast<Eigen::Index>(stack.size());
  const auto cols = static_cast<Eigen::Index>(stack.front().size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (stack[static_cast<std::size_t>(r)].size() != static_cast<std::size_t>(cols)) {
      throw std::invalid_argument("top_singular_vector: ragged stack");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = stack[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  }
  if (m.isZero(0.0)) throw std::invalid_argument("top_singular_vector: degenerate all-zero stack");

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinV);
  Eigen::VectorXd u = svd.matrixV().col(0);
  u.normalize();
  Eigen::Index argmax = 0;
  u.cwiseAbs().maxCoeff(&argmax);
  if (u(argmax) < 0) u = -u;
  return {u.data(), u.data() + u.size()};
}

bool is_escape_artifact(std::string_view token) {
  static const std::regex escape(R"((\\u[0-9a-fA-F]{4})+)");
  if (std::regex_match(token.begin(), token.end(), escape)) return true;
  if (token.empty()) return true;
  std::size_t i = 0;
  while (i < token.size()) {
    char32_t cp = 0;
    if (!next_code_point(token, i, cp)) {
      ++i;
      continue;
    }
    if (printable(cp)) return false;
  }
  return true;
}

std::vector<std::string> vocab_projection(std::span<const double> v, const Tensor& unembed,
                                          std::span<const std::string> vocab, std::size_t k) {
  if (unembed.rank() != 2 || unembed.dim(1) != v.size() || unembed.dim(0) != vocab.size()) {
    throw std::invalid_argument("vocab_projection: unembed " + format_dims(unembed.dims()) +
                                " incompatible with vector/vocabulary");
  }
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t t = 0; t < vocab.size(); ++t) {
    if (is_escape_artifact(vocab[t])) continue;
    const auto row = unembed.row(t);
    double s = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) s += row[j] * v[j];
    scored.emplace_back(s, t);
  }
  if (k > scored.size()) {
    throw std::invalid_argument("vocab_projection: k = " + std::to_string(k) + " exceeds the " +
                                std::to_string(scored.size()) + " tokens left after filtering");
  }
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(),
                    [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(vocab[scored[i].second]);
  return out;
}

AnatomyReport analyze_anatomy(const TraceSet& set, const AnatomyOptions& options) {
  AnatomyReport report;
  report.attention = mean_attention_profile(set);

  const std::size_t L = set.model_meta.layers;
  const std::size_t d = set.model_meta.hidden;
  Tensor last_hidden({set.records.size(), d});
  std::vector<Label> outputs(set.records.size());
  for (std::size_t r = 0; r < set.records.size(); ++r) {
    const auto h = set.records[r].answer_hidden(L);
    std::copy(h.begin(), h.end(), last_hidden.row(r).begin());
    const auto s = label_scores(layer_logits(h, set.unembed), set.answer_space);
    // Class 1 marks the positive answer so w_probe points toward it.
    outputs[r] = s.normalized_positive >= 0.5 ? 1 : 0;
  }
  report.probe = fit_output_probe(last_hidden, outputs, {}, options.seed);
  report.values = value_vector_similarity(set.ffn_value_matrices, report.probe, options.scope);

  const auto usable = static_cast<std::size_t>(
      std::count_if(set.vocab.begin(), set.vocab.end(), [](const std::string& t) { return !is_escape_artifact(t); }));
  const std::size_t k = std::min(options.top_k_tokens, usable);
  auto project = [&](const std::string& key, std::span<const double> v) {
    report.values.vocab_projections[key] = vocab_projection(v, set.unembed, set.vocab, k);
  };
  project("probe", report.probe.w_probe);
  if (!report.values.top_singular_vector.empty()) project("top_singular", report.values.top_singular_vector);
  for (const auto& t : report.values.top_vectors) {
    const auto row = set.ffn_value_matrices[t.layer].row(t.index);
    project("v" + std::to_string(t.index) + "_layer" + std::to_string(t.layer),
            std::vector<double>(row.begin(), row.end()));
  }

  double best = -1.0;
  for (std::size_t l = 0; l < report.attention.scores.size(); ++l) {
    const auto& s = report.attention.scores[l];
    const double focus = s[static_cast<std::size_t>(Segment::query)] + s[static_cast<std::size_t>(Segment::rationale)];
    if (focus > best) {
      best = focus;
      report.peak_attention_layer = l;
    }
  }
  const auto& counts = report.values.per_layer_top_counts;
  report.peak_value_layer = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  report.peaks_aligned = report.peak_attention_layer == report.peak_value_layer;
  return report;
}

std::string to_json(const AnatomyReport& report) {
  using nlohmann::json;
  json doc;
  auto attention = json::array();
  for (std::size_t l = 0; l < report.attention.scores.size(); ++l) {
    json row{{"layer", l}};
    for (std::size_t b = 0; b < kSegmentCount; ++b) row[segment_name(static_cast<Segment>(b))] = report.attention.scores[l][b];
    attention.push_back(std::move(row));
  }
  doc["attention_profile"] = std::move(attention);
  doc["output_probe"] = {{"l2", report.probe.l2},
                         {"train_accuracy", report.probe.train_accuracy},
                         {"cv_accuracy", report.probe.cv_accuracy},
                         {"w_probe", report.probe.w_probe}};
  auto tops = json::array();
  for (const auto& t : report.values.top_vectors) {
    tops.push_back({{"layer", t.layer}, {"index", t.index}, {"cosine", t.cosine}});
  }
  auto zeros = json::array();
  for (const auto& t : report.values.zero_norm) zeros.push_back({{"layer", t.layer}, {"index", t.index}});
  doc["value_vectors"] = {{"per_layer_top_counts", report.values.per_layer_top_counts},
                          {"top_vectors", std::move(tops)},
                          {"zero_norm_excluded", std::move(zeros)},
                          {"top_singular_vector", report.values.top_singular_vector},
                          {"vocab_projections", report.values.vocab_projections}};
  doc["misalignment"] = {{"peak_attention_layer", report.peak_attention_layer},
                         {"peak_value_layer", report.peak_value_layer},
                         {"aligned", report.peaks_aligned}};
  return doc.dump(2) + "\n";
}

}  // namespace ict
