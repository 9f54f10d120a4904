#include "ict/tensor.hpp"

#include <stdexcept>

namespace ict {

std::size_t element_count(std::span<const std::size_t> dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return dims.empty() ? 0 : n;
}

std::string format_dims(std::span<const std::size_t> dims) {
  std::string out = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(dims[i]);
  }
  return out + "]";
}

Tensor::Tensor(std::vector<std::size_t> dims)
    : dims_(std::move(dims)), values_(element_count(dims_), 0.0f) {}

Tensor::Tensor(std::vector<std::size_t> dims, std::vector<float> values)
    : dims_(std::move(dims)), values_(std::move(values)) {
  if (values_.size() != element_count(dims_)) {
    throw std::invalid_argument("tensor: " + std::to_string(values_.size()) +
                                " values do not fill dims " + format_dims(dims_));
  }
}

std::span<const float> Tensor::row(std::size_t i) const {
  const std::size_t stride = values_.size() / dims_.at(0);
  return std::span<const float>(values_).subspan(i * stride, stride);
}

std::span<float> Tensor::row(std::size_t i) {
  const std::size_t stride = values_.size() / dims_.at(0);
  return std::span<float>(values_).subspan(i * stride, stride);
}

std::span<const float> Tensor::row(std::size_t i, std::size_t j) const {
  const std::size_t stride = dims_.at(2);
  return std::span<const float>(values_).subspan((i * dims_[1] + j) * stride, stride);
}

std::span<float> Tensor::row(std::size_t i, std::size_t j) {
  const std::size_t stride = dims_.at(2);
  return std::span<float>(values_).subspan((i * dims_[1] + j) * stride, stride);
}

}  // namespace ict
