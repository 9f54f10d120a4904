#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace ict {

/// Seeded generator whose draws are identical on every platform.
///
/// std::*_distribution output is implementation-defined, so uniform and
/// normal variates are derived here directly from mt19937_64 words.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double normal();
  /// Uniform integer in [0, n); n must be positive.
  std::size_t below(std::size_t n);
  bool coin() { return (engine_() >> 63) != 0; }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Stream-splitting: an independent seed for (base, stream).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace ict
