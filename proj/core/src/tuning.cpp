#include "ict/tuning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ict/rng.hpp"

namespace ict {

std::vector<TuningQuestion> tuning_questions(std::span<const QuestionPaths> questions) {
  std::vector<TuningQuestion> out;
  for (const auto& q : questions) {
    if (!q.gold || q.paths.empty()) continue;
    TuningQuestion t;
    t.gold = *q.gold;
    for (const auto& p : q.paths) {
      t.answers.push_back(p.answer);
      t.agreements.push_back(p.agreement);
    }
    out.push_back(std::move(t));
  }
  return out;
}

double surrogate_loss(std::span<const TuningQuestion> questions, std::span<const double> w, double l2,
                      std::vector<double>* grad) {
  if (questions.empty()) throw std::invalid_argument("surrogate_loss: no questions");
  const std::size_t n = w.size();
  if (grad) grad->assign(n, 0.0);

  // Per label a, A(a) = sum of agreement vectors of paths answering a, so the
  // label score is w^T A(a) and d(loss)/dw = sum_a softmax_a A(a) - A(gold).
  std::array<std::vector<double>, 2> summed{std::vector<double>(n), std::vector<double>(n)};
  double total = 0.0;
  for (const auto& q : questions) {
    std::fill(summed[0].begin(), summed[0].end(), 0.0);
    std::fill(summed[1].begin(), summed[1].end(), 0.0);
    for (std::size_t k = 0; k < q.answers.size(); ++k) {
      const auto& bits = q.agreements[k].bits;
      if (bits.size() != n) {
        throw std::invalid_argument("surrogate_loss: agreement length " + std::to_string(bits.size()) +
                                    " != weight length " + std::to_string(n));
      }
      auto& target = summed[q.answers[k]];
      for (std::size_t i = 0; i < n; ++i) target[i] += bits[i];
    }
    std::array<double, 2> score{};
    for (std::size_t a = 0; a < 2; ++a) {
      score[a] = std::inner_product(w.begin(), w.end(), summed[a].begin(), 0.0);
    }
    const double top = std::max(score[0], score[1]);
    const double log_norm = top + std::log(std::exp(score[0] - top) + std::exp(score[1] - top));
    total += log_norm - score[q.gold];
    if (grad) {
      const double p0 = std::exp(score[0] - log_norm);
      const std::array<double, 2> prob{p0, 1.0 - p0};
      for (std::size_t i = 0; i < n; ++i) {
        (*grad)[i] += prob[0] * summed[0][i] + prob[1] * summed[1][i] - summed[q.gold][i];
      }
    }
  }

  const double scale = 1.0 / static_cast<double>(questions.size());
  double loss = total * scale;
  if (grad) {
    for (auto& g : *grad) g *= scale;
  }
  if (l2 != 0.0) {
    const double w0 = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      loss += l2 * (w[i] - w0) * (w[i] - w0);
      if (grad) (*grad)[i] += 2.0 * l2 * (w[i] - w0);
    }
  }
  return loss;
}

std::vector<TuningQuestion> select_heldout(std::span<const TuningQuestion> questions,
                                           const TuneConfig& cfg) {
  std::vector<TuningQuestion> chosen(questions.begin(), questions.end());
  if (cfg.n_heldout && chosen.size() > cfg.n_heldout) {
    std::vector<std::size_t> order(chosen.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(cfg.seed);
    rng.shuffle(std::span<std::size_t>(order));
    order.resize(cfg.n_heldout);
    std::sort(order.begin(), order.end());
    std::vector<TuningQuestion> subset;
    subset.reserve(order.size());
    for (auto i : order) subset.push_back(chosen[i]);
    chosen = std::move(subset);
  }
  return chosen;
}

LayerWeights tune_weights(std::span<const TuningQuestion> questions, const TuneConfig& cfg) {
  if (questions.empty()) throw std::invalid_argument("tune_weights: empty held-out set");
  if (!(cfg.lr > 0.0)) throw std::invalid_argument("tune_weights: lr must be positive");
  const auto& first = questions.front();
  if (first.agreements.empty()) throw std::invalid_argument("tune_weights: question without paths");
  const std::size_t n = first.agreements.front().size();
  for (const auto& q : questions) {
    if (q.agreements.empty()) throw std::invalid_argument("tune_weights: question without paths");
    for (const auto& a : q.agreements) {
      if (a.size() != n) throw std::invalid_argument("tune_weights: inconsistent agreement lengths");
    }
  }

  const auto heldout = select_heldout(questions, cfg);
  LayerWeights out = LayerWeights::uniform(n);
  auto& w = out.w;
  std::vector<double> grad, m(n, 0.0), v(n, 0.0);

  const double initial = surrogate_loss(heldout, w, cfg.l2);
  // Adam is not monotone; the best iterate (including w0) is returned.
  std::vector<double> best_w = w;
  double best_loss = initial;
  double b1_power = 1.0, b2_power = 1.0;
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const double loss = surrogate_loss(heldout, w, cfg.l2, &grad);
    if (!std::isfinite(loss)) throw std::runtime_error("tune_weights: loss diverged");
    if (loss < best_loss) {
      best_loss = loss;
      best_w = w;
    }
    b1_power *= cfg.beta1;
    b2_power *= cfg.beta2;
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
      const double m_hat = m[i] / (1.0 - b1_power);
      const double v_hat = v[i] / (1.0 - b2_power);
      w[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }

  const double last = surrogate_loss(heldout, w, cfg.l2);
  if (!(last < best_loss)) {
    w = best_w;
  } else {
    best_loss = last;
  }

  out.source_dataset = cfg.source_dataset;
  out.training_meta = {cfg.lr, cfg.iterations, heldout.size(), cfg.seed, cfg.l2, initial, best_loss};
  return out;
}

std::vector<VoteResult> apply_transfer(const LayerWeights& weights,
                                       std::span<const QuestionPaths> target) {
  std::vector<VoteResult> out;
  out.reserve(target.size());
  for (const auto& q : target) {
    for (const auto& p : q.paths) {
      if (p.agreement.size() != weights.w.size()) {
        throw std::invalid_argument("apply_transfer: weights span " + std::to_string(weights.w.size()) +
                                    " layers but target paths have " +
                                    std::to_string(p.agreement.size()));
      }
    }
    auto r = vote_sc_ic(q.paths, &weights);
    r.method = Method::sc_ic_transfer;
    out.push_back(r);
  }
  return out;
}

}  // namespace ict
