#include "ict/consistency.hpp"

#include <stdexcept>
#include <string>

namespace ict {

AgreementVector agreement_vector(const LatentPredictionVector& latent, Label final_label) {
  const std::size_t n = latent.labels.size();
  if (n < 3) {
    throw std::invalid_argument("agreement_vector: need L >= 2 (got " + std::to_string(n) +
                                " layer predictions)");
  }
  AgreementVector a;
  a.bits.reserve(n - 2);
  for (std::size_t l = 1; l + 1 < n; ++l) a.bits.push_back(latent.labels[l] == final_label ? 1 : 0);
  return a;
}

double internal_consistency(const AgreementVector& a) {
  if (a.bits.empty()) throw std::invalid_argument("internal_consistency: empty agreement vector");
  std::size_t agree = 0;
  for (auto b : a.bits) agree += b;
  return static_cast<double>(agree) / static_cast<double>(a.bits.size());
}

double weighted_consistency(const AgreementVector& a, std::span<const double> w) {
  if (w.size() != a.bits.size()) {
    throw std::invalid_argument("weighted_consistency: " + std::to_string(w.size()) +
                                " weights for " + std::to_string(a.bits.size()) + " layers");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) sum += w[i] * a.bits[i];
  return sum;
}

double weighted_consistency(const AgreementVector& a, const LayerWeights& w) {
  return weighted_consistency(a, std::span<const double>(w.w));
}

}  // namespace ict
