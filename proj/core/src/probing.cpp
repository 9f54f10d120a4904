#include "ict/probing.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "ict/parallel.hpp"
#include "ict/rng.hpp"

namespace ict {

namespace {

constexpr std::size_t kMinProbeRows = 10;

bool has_both_classes(std::span<const Label> labels, std::span<const std::size_t> rows) {
  bool seen[2] = {false, false};
  for (auto r : rows) seen[labels[r] ? 1 : 0] = true;
  return seen[0] && seen[1];
}

// Record indices feeding each grid row, and the recorded position they use.
struct RowMembers {
  std::vector<std::size_t> records;
  std::vector<std::size_t> positions;
};

}  // namespace

ProbeSplit split_rows(std::span<const std::size_t> rows, std::uint64_t seed) {
  std::vector<std::size_t> order(rows.begin(), rows.end());
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  const std::size_t n_val = order.size() / 5;
  ProbeSplit split;
  split.validation.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  split.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(split.validation.begin(), split.validation.end());
  std::sort(split.train.begin(), split.train.end());
  return split;
}

ProbeModel fit_probe_on_split(const Tensor& features, std::span<const Label> labels,
                              const ProbeSplit& split, std::span<const double> l2_grid) {
  if (split.validation.empty()) throw std::invalid_argument("fit_probe: empty validation split");
  if (!has_both_classes(labels, split.train)) {
    throw std::invalid_argument("fit_probe: training split holds a single class");
  }
  if (l2_grid.empty()) throw std::invalid_argument("fit_probe: empty l2 grid");

  std::vector<double> grid(l2_grid.begin(), l2_grid.end());
  std::sort(grid.begin(), grid.end());
  ProbeModel best;
  best.val_accuracy = -1.0;
  for (double l2 : grid) {
    LogisticOptions opts;
    opts.l2 = l2;
    const auto model = fit_logistic(features, labels, split.train, opts);
    const double acc = accuracy(model, features, labels, split.validation);
    if (acc > best.val_accuracy) {
      best = {model.weights, model.bias, l2, acc};
    }
  }
  return best;
}

ProbeModel fit_probe(const Tensor& features, std::span<const Label> labels,
                     std::span<const double> l2_grid, std::uint64_t seed) {
  if (features.rank() != 2 || features.dim(0) != labels.size()) {
    throw std::invalid_argument("fit_probe: features must be [N x d] with N labels");
  }
  if (labels.size() < kMinProbeRows) {
    throw std::invalid_argument("fit_probe: need at least 10 examples to split");
  }
  std::vector<std::size_t> rows(labels.size());
  std::iota(rows.begin(), rows.end(), 0);
  if (!has_both_classes(labels, rows)) throw std::invalid_argument("fit_probe: single-class labels");
  return fit_probe_on_split(features, labels, split_rows(rows, seed), l2_grid);
}

ProbeGrid probe_grid(const TraceSet& set, const ProbeGridOptions& options) {
  const auto& records = set.records;
  if (records.size() < 2) throw std::invalid_argument("probe_grid: need more than one record");
  std::vector<Label> labels(records.size());
  for (std::size_t r = 0; r < records.size(); ++r) {
    if (!records[r].gold_label) {
      throw std::invalid_argument("probe_grid: record " + records[r].example_id + " has no gold label");
    }
    labels[r] = *records[r].gold_label;
  }

  std::size_t max_steps = 0;
  for (const auto& rec : records) max_steps = std::max(max_steps, rec.num_positions() - 1);

  ProbeGrid grid;
  grid.rows = max_steps + 1;
  grid.layers = set.model_meta.layers + 1;
  grid.split_seed = options.seed;
  grid.accuracies.assign(grid.rows * grid.layers, std::numeric_limits<double>::quiet_NaN());
  grid.support.assign(grid.rows, 0);
  for (std::size_t s = 0; s < max_steps; ++s) grid.row_names.push_back("step" + std::to_string(s));
  grid.row_names.push_back("answer");

  std::vector<RowMembers> members(grid.rows);
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto& rec = records[r];
    std::size_t step = 0;
    for (std::size_t p = 0; p < rec.num_positions(); ++p) {
      if (p == rec.answer_position_index) continue;
      members[step].records.push_back(r);
      members[step].positions.push_back(p);
      ++step;
    }
    members.back().records.push_back(r);
    members.back().positions.push_back(rec.answer_position_index);
  }
  for (std::size_t s = 0; s < grid.rows; ++s) grid.support[s] = members[s].records.size();

  std::vector<std::size_t> all(records.size());
  std::iota(all.begin(), all.end(), 0);
  const ProbeSplit shared = split_rows(all, options.seed);
  std::vector<bool> in_train(records.size(), false);
  for (auto r : shared.train) in_train[r] = true;

  const std::size_t d = set.model_meta.hidden;
  parallel_for(grid.rows * grid.layers, [&](std::size_t cell) {
    const std::size_t s = cell / grid.layers;
    const std::size_t l = cell % grid.layers;
    const auto& m = members[s];
    if (m.records.size() < kMinProbeRows) return;

    Tensor features({records.size(), d});
    for (std::size_t i = 0; i < m.records.size(); ++i) {
      const auto h = records[m.records[i]].hidden_at(m.positions[i], l);
      std::copy(h.begin(), h.end(), features.row(m.records[i]).begin());
    }
    ProbeSplit split;
    if (options.shared_split) {
      for (auto r : m.records) (in_train[r] ? split.train : split.validation).push_back(r);
    } else {
      split = split_rows(m.records, derive_seed(options.seed, cell));
    }
    if (split.validation.empty() || !has_both_classes(labels, split.train)) return;
    grid.accuracies[cell] = fit_probe_on_split(features, labels, split, options.l2_grid).val_accuracy;
  });
  return grid;
}

std::string to_csv(const ProbeGrid& grid) {
  std::string out = "step";
  for (std::size_t l = 0; l < grid.layers; ++l) out += ",layer" + std::to_string(l);
  out += ",support\n";
  char buf[32];
  for (std::size_t s = 0; s < grid.rows; ++s) {
    out += grid.row_names[s];
    for (std::size_t l = 0; l < grid.layers; ++l) {
      const double v = grid.at(s, l);
      if (std::isnan(v)) {
        out += ",NA";
      } else {
        std::snprintf(buf, sizeof buf, ",%.6f", v);
        out += buf;
      }
    }
    out += "," + std::to_string(grid.support[s]) + "\n";
  }
  return out;
}

}  // namespace ict
