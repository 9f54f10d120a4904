#pragma once

#include <span>
#include <vector>

#include "ict/layer_weights.hpp"
#include "ict/lens.hpp"

namespace ict {

/// bits[l-1] = 1 iff the latent prediction at layer l matches the final one,
/// for l = 1..L-1. The embedding layer and the final layer are excluded.
struct AgreementVector {
  std::vector<std::uint8_t> bits;
  std::size_t first_layer = 1;

  std::size_t size() const noexcept { return bits.size(); }
  friend bool operator==(const AgreementVector&, const AgreementVector&) = default;
};

/// latent has L+1 entries. Throws std::invalid_argument when L < 2.
AgreementVector agreement_vector(const LatentPredictionVector& latent, Label final_label);

/// Mean of the agreement bits. Throws on an empty vector.
double internal_consistency(const AgreementVector& a);

/// w^T a with no normalization; negative weights are allowed.
double weighted_consistency(const AgreementVector& a, std::span<const double> w);
double weighted_consistency(const AgreementVector& a, const LayerWeights& w);

}  // namespace ict
