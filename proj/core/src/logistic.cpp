#include "ict/logistic.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include <Eigen/Dense>

namespace ict {

namespace {

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

double LogisticModel::logit(std::span<const float> x) const {
  double z = bias;
  for (std::size_t k = 0; k < weights.size(); ++k) z += weights[k] * x[k];
  return z;
}

std::vector<double> default_l2_grid() {
  std::vector<double> grid;
  for (int e = -6; e <= 6; ++e) grid.push_back(std::pow(10.0, e));
  return grid;
}

LogisticModel fit_logistic(const Tensor& features, std::span<const Label> labels,
                           std::span<const std::size_t> rows, const LogisticOptions& options) {
  if (features.rank() != 2) throw std::invalid_argument("fit_logistic: features must be [N x d]");
  if (labels.size() != features.dim(0)) throw std::invalid_argument("fit_logistic: label count mismatch");

  std::vector<std::size_t> all;
  if (rows.empty()) {
    all.resize(features.dim(0));
    std::iota(all.begin(), all.end(), 0);
    rows = all;
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto d = static_cast<Eigen::Index>(features.dim(1));
  const Eigen::Index p = d + (options.fit_intercept ? 1 : 0);

  Eigen::MatrixXd X(n, p);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto x = features.row(rows[static_cast<std::size_t>(i)]);
    for (Eigen::Index k = 0; k < d; ++k) X(i, k) = x[static_cast<std::size_t>(k)];
    if (options.fit_intercept) X(i, d) = 1.0;
    y(i) = labels[rows[static_cast<std::size_t>(i)]] ? 1.0 : 0.0;
  }
  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(p, options.l2);
  if (options.fit_intercept) penalty(d) = 0.0;

  auto objective = [&](const Eigen::VectorXd& beta) {
    const Eigen::VectorXd z = X * beta;
    double f = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) f += softplus(z(i)) - y(i) * z(i);
    return f + 0.5 * beta.dot(penalty.cwiseProduct(beta));
  };

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  double f = objective(beta);
  LogisticModel model;
  for (std::size_t it = 0; it < options.max_iterations; ++it) {
    const Eigen::VectorXd z = X * beta;
    Eigen::VectorXd prob(n), curvature(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      prob(i) = sigmoid(z(i));
      curvature(i) = prob(i) * (1.0 - prob(i));
    }
    const Eigen::VectorXd grad = X.transpose() * (prob - y) + penalty.cwiseProduct(beta);
    model.iterations = it;
    if (grad.norm() <= options.tolerance) {
      model.converged = true;
      break;
    }
    Eigen::MatrixXd hessian = X.transpose() * curvature.asDiagonal() * X;
    hessian.diagonal() += penalty;
    hessian.diagonal().array() += 1e-12;
    const Eigen::VectorXd step = hessian.ldlt().solve(grad);

    // Armijo backtracking on the Newton direction.
    double t = 1.0;
    const double slope = grad.dot(step);
    Eigen::VectorXd candidate = beta - step;
    double f_new = objective(candidate);
    while (f_new > f - 1e-4 * t * slope && t > 1e-10) {
      t *= 0.5;
      candidate = beta - t * step;
      f_new = objective(candidate);
    }
    if (!(f_new < f)) {
      // No further decrease is representable; the iterate is optimal to
      // working precision.
      model.converged = true;
      break;
    }
    beta = candidate;
    f = f_new;
  }

  model.weights.assign(beta.data(), beta.data() + d);
  model.bias = options.fit_intercept ? beta(d) : 0.0;
  return model;
}

double accuracy(const LogisticModel& model, const Tensor& features, std::span<const Label> labels,
                std::span<const std::size_t> rows) {
  if (rows.empty()) throw std::invalid_argument("accuracy: no rows");
  std::size_t hits = 0;
  for (auto r : rows) hits += model.predict(features.row(r)) == labels[r];
  return static_cast<double>(hits) / static_cast<double>(rows.size());
}

}  // namespace ict
