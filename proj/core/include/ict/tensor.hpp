#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace ict {

/// Dense row-major float32 tensor with an explicit dimension list.
///
/// This is the in-memory form of every tensor payload in a trace container.
/// Indexing helpers exist for ranks 1 to 3, which is all the toolkit needs.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims);
  Tensor(std::vector<std::size_t> dims, std::vector<float> values);

  const std::vector<std::size_t>& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  std::span<float> values() noexcept { return values_; }
  std::span<const float> values() const noexcept { return values_; }

  float& operator()(std::size_t i) { return values_[i]; }
  float operator()(std::size_t i) const { return values_[i]; }
  float& operator()(std::size_t i, std::size_t j) { return values_[i * dims_[1] + j]; }
  float operator()(std::size_t i, std::size_t j) const { return values_[i * dims_[1] + j]; }
  float& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return values_[(i * dims_[1] + j) * dims_[2] + k];
  }
  float operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return values_[(i * dims_[1] + j) * dims_[2] + k];
  }

  /// Contiguous slice over the last axis at the given leading indices.
  std::span<const float> row(std::size_t i) const;
  std::span<float> row(std::size_t i);
  std::span<const float> row(std::size_t i, std::size_t j) const;
  std::span<float> row(std::size_t i, std::size_t j);

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> dims_;
  std::vector<float> values_;
};

std::size_t element_count(std::span<const std::size_t> dims);
std::string format_dims(std::span<const std::size_t> dims);

}  // namespace ict
