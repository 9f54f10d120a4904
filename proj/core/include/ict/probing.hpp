#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ict/logistic.hpp"
#include "ict/trace.hpp"

namespace ict {

struct ProbeModel {
  std::vector<double> weights;
  double bias = 0.0;
  double l2_strength = 0.0;
  double val_accuracy = 0.0;
};

struct ProbeSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

/// Seeded 80/20 partition of the given row ids (validation gets floor(n/5)).
ProbeSplit split_rows(std::span<const std::size_t> rows, std::uint64_t seed);

/// Fits one probe per l2 strength on the train rows and keeps the one with the
/// best validation accuracy (ties prefer the smaller strength).
ProbeModel fit_probe_on_split(const Tensor& features, std::span<const Label> labels,
                              const ProbeSplit& split, std::span<const double> l2_grid);

/// fit_probe_on_split over a seeded 80/20 split of all rows. Requires N >= 10
/// and both classes in the training part.
ProbeModel fit_probe(const Tensor& features, std::span<const Label> labels,
                     std::span<const double> l2_grid, std::uint64_t seed = 0);

struct ProbeGridOptions {
  std::uint64_t seed = 0;
  /// One split over records reused by every cell; otherwise a split per cell.
  bool shared_split = true;
  std::vector<double> l2_grid = default_l2_grid();
};

/// Rows are reasoning steps, left-aligned (step 0 is the first recorded
/// non-answer position), followed by one row for the answer position.
/// Cells without enough data hold NaN.
struct ProbeGrid {
  std::size_t rows = 0;
  std::size_t layers = 0;
  std::vector<double> accuracies;      // rows x layers
  std::vector<std::size_t> support;    // records contributing to each row
  std::vector<std::string> row_names;  // "step0".. "answer"
  std::uint64_t split_seed = 0;

  double at(std::size_t row, std::size_t layer) const { return accuracies[row * layers + layer]; }
};

ProbeGrid probe_grid(const TraceSet& set, const ProbeGridOptions& options = {});

/// rows = steps, columns = layers; absent cells are written as NA.
std::string to_csv(const ProbeGrid& grid);

}  // namespace ict
