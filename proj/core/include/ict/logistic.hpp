#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ict/tensor.hpp"
#include "ict/trace.hpp"

namespace ict {

struct LogisticOptions {
  double l2 = 1.0;
  bool fit_intercept = true;
  double tolerance = 1e-6;  // on the gradient norm
  std::size_t max_iterations = 1000;
};

struct LogisticModel {
  std::vector<double> weights;
  double bias = 0.0;
  std::size_t iterations = 0;
  bool converged = false;

  double logit(std::span<const float> x) const;
  /// Label 1 iff the logit is positive.
  Label predict(std::span<const float> x) const { return logit(x) > 0.0 ? 1 : 0; }
};

/// Minimizes sum_i log(1 + exp(-s_i z_i)) + (l2/2)||w||^2 with Newton steps
/// and backtracking; the intercept is not penalized. Rows of features are
/// selected by rows (all rows when empty).
LogisticModel fit_logistic(const Tensor& features, std::span<const Label> labels,
                           std::span<const std::size_t> rows, const LogisticOptions& options);

double accuracy(const LogisticModel& model, const Tensor& features, std::span<const Label> labels,
                std::span<const std::size_t> rows);

/// 13 strengths, one per decade from 1e-6 to 1e6.
std::vector<double> default_l2_grid();

}  // namespace ict
