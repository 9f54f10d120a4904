#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "toy_internal.hpp"

namespace ict::toy {

namespace {

using detail::Mat;

// Input positions whose next-token prediction is scored.
std::pair<std::size_t, std::size_t> scored_range(const Question& q, bool answer_only) {
  if (answer_only) return {q.answer_slot, q.answer_slot + 1};
  return {q.prompt_length - 1, q.tokens.size() - 1};
}

// Cross-entropy averaged over the scored positions; writes d(loss)/d(logits)
// when d_logits is non-null.
double sequence_loss(const Mat& logits, const Question& q, bool answer_only, Mat* d_logits) {
  const auto [begin, end] = scored_range(q, answer_only);
  const double weight = 1.0 / static_cast<double>(end - begin);
  if (d_logits) d_logits->setZero(logits.rows(), logits.cols());
  double loss = 0.0;
  for (std::size_t t = begin; t < end; ++t) {
    const auto row = logits.row(static_cast<Eigen::Index>(t));
    const float top = row.maxCoeff();
    const Eigen::RowVectorXf e = (row.array() - top).exp();
    const float total = e.sum();
    const Token target = q.tokens[t + 1];
    loss -= weight * (static_cast<double>(row(target) - top) - std::log(static_cast<double>(total)));
    if (d_logits) {
      auto d = d_logits->row(static_cast<Eigen::Index>(t));
      d = e / total * static_cast<float>(weight);
      d(target) -= static_cast<float>(weight);
    }
  }
  return loss;
}

std::span<const Token> model_input(const Question& q) {
  // The final token is only ever a target.
  return std::span(q.tokens).first(q.tokens.size() - 1);
}

double global_norm(const ToyParams& gradient) {
  double sum = 0.0;
  for (const auto* t : gradient.tensors()) {
    for (float g : t->values()) sum += static_cast<double>(g) * g;
  }
  return std::sqrt(sum);
}

}  // namespace

double loss_and_gradient(const ToyParams& params, const Question& question, bool answer_only,
                         ToyParams& gradient) {
  detail::ForwardCache cache;
  const auto input = model_input(question);
  detail::forward(params, input, cache);
  Mat d_logits;
  const double loss = sequence_loss(cache.logits, question, answer_only, &d_logits);
  detail::backward(params, input, cache, d_logits, gradient);
  return loss;
}

double completion_loss(const ToyParams& params, const SyntheticTask& task,
                       std::span<const std::size_t> questions, bool answer_only) {
  if (questions.empty()) throw std::invalid_argument("completion_loss: no questions");
  detail::ForwardCache cache;
  double total = 0.0;
  for (auto i : questions) {
    const auto& q = task.questions.at(i);
    detail::forward(params, model_input(q), cache);
    total += sequence_loss(cache.logits, q, answer_only, nullptr);
  }
  return total / static_cast<double>(questions.size());
}

double answer_accuracy(const ToyParams& params, const SyntheticTask& task) {
  if (task.questions.empty()) return 0.0;
  detail::ForwardCache cache;
  std::size_t hits = 0;
  for (const auto& q : task.questions) {
    detail::forward(params, std::span(q.tokens).first(q.answer_slot + 1), cache);
    const auto row = cache.logits.row(static_cast<Eigen::Index>(q.answer_slot));
    const Label predicted = row(CoinVocab::yes) >= row(CoinVocab::no) ? kPositiveLabel : kNegativeLabel;
    hits += predicted == q.gold;
  }
  return static_cast<double>(hits) / static_cast<double>(task.questions.size());
}

ToyParams train_toy(const SyntheticTask& task, const ToyConfig& config, const TrainOptions& options,
                    TrainReport* report) {
  if (task.questions.empty()) throw std::invalid_argument("train_toy: empty task");
  if (options.batch_size == 0) throw std::invalid_argument("train_toy: batch size must be positive");
  ToyParams params = ToyParams::init(config);
  for (const auto& q : task.questions) detail::check_tokens(params, q.tokens);

  constexpr double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  ToyParams m = ToyParams::zeros_like(params);
  ToyParams v = ToyParams::zeros_like(params);
  ToyParams gradient = ToyParams::zeros_like(params);
  auto param_list = params.tensors();
  auto m_list = m.tensors();
  auto v_list = v.tensors();
  auto g_list = gradient.tensors();

  Rng rng(derive_seed(config.seed, 0xBA7C));
  std::vector<std::size_t> order(task.questions.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  if (report) report->losses.clear();
  double b1_power = 1.0, b2_power = 1.0;
  for (std::size_t step = 0; step < options.steps; ++step) {
    for (auto* g : g_list) std::fill(g->values().begin(), g->values().end(), 0.0f);
    double loss = 0.0;
    for (std::size_t b = 0; b < options.batch_size; ++b) {
      if (cursor == order.size()) {
        rng.shuffle(std::span<std::size_t>(order));
        cursor = 0;
      }
      loss += loss_and_gradient(params, task.questions[order[cursor++]], options.answer_only, gradient);
    }
    const auto inv_batch = 1.0f / static_cast<float>(options.batch_size);
    loss *= inv_batch;
    for (auto* g : g_list) {
      for (auto& x : g->values()) x *= inv_batch;
    }

    const double norm = global_norm(gradient);
    if (!std::isfinite(loss) || !std::isfinite(norm)) {
      std::ostringstream msg;
      msg << "train_toy: diverged at step " << step << " (loss " << loss << ", grad norm " << norm
          << ", lr " << options.lr << ", seed " << config.seed << ")";
      throw std::runtime_error(msg.str());
    }
    if (report) report->losses.push_back(loss);
    const float clip = options.clip_norm > 0.0 && norm > options.clip_norm
                           ? static_cast<float>(options.clip_norm / norm)
                           : 1.0f;

    b1_power *= beta1;
    b2_power *= beta2;
    const double step_size = options.lr * std::sqrt(1.0 - b2_power) / (1.0 - b1_power);
    for (std::size_t t = 0; t < param_list.size(); ++t) {
      auto p = param_list[t]->values();
      auto mt = m_list[t]->values();
      auto vt = v_list[t]->values();
      const auto gt = g_list[t]->values();
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = static_cast<double>(gt[i]) * clip;
        mt[i] = static_cast<float>(beta1 * mt[i] + (1.0 - beta1) * g);
        vt[i] = static_cast<float>(beta2 * vt[i] + (1.0 - beta2) * g * g);
        p[i] -= static_cast<float>(step_size * mt[i] / (std::sqrt(static_cast<double>(vt[i])) +
                                                         epsilon * std::sqrt(1.0 - b2_power)));
      }
    }
  }

  params.train_accuracy = answer_accuracy(params, task);
  if (report) report->train_accuracy = params.train_accuracy;
  return params;
}

}  // namespace ict::toy
