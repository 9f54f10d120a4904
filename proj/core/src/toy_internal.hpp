#pragma once

// Eigen-backed forward and backward passes shared by inference, tracing and
// training. Activations are row-per-position matrices.

#include <vector>

#include <Eigen/Dense>

#include "ict/toymodel.hpp"

namespace ict::toy::detail {

using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;

inline ConstMatMap as_matrix(const Tensor& t) {
  return ConstMatMap(t.values().data(), static_cast<Eigen::Index>(t.dim(0)),
                     static_cast<Eigen::Index>(t.size() / t.dim(0)));
}
inline MatMap as_matrix(Tensor& t) {
  return MatMap(t.values().data(), static_cast<Eigen::Index>(t.dim(0)),
                static_cast<Eigen::Index>(t.size() / t.dim(0)));
}
inline Eigen::Map<const Eigen::RowVectorXf> as_row(const Tensor& t) {
  return Eigen::Map<const Eigen::RowVectorXf>(t.values().data(), static_cast<Eigen::Index>(t.size()));
}
inline Eigen::Map<Eigen::RowVectorXf> as_row(Tensor& t) {
  return Eigen::Map<Eigen::RowVectorXf>(t.values().data(), static_cast<Eigen::Index>(t.size()));
}

struct NormCache {
  Mat normalized;                // x-hat
  Eigen::VectorXf inverse_std;   // per position
};

struct BlockCache {
  Mat attn_in;                // MHSA input (normalized when pre_norm)
  NormCache norm1;
  Mat q, k, v;                // [T x d]
  std::vector<Mat> probs;     // per head, [T x T], zero above the diagonal
  Mat context;                // concatenated head outputs
  Mat mixed;                  // h + MHSA(.)
  Mat ffn_in;                 // FFN input (normalized when pre_norm)
  NormCache norm2;
  Mat pre_activation;         // [T x d_m]
  Mat activation;             // ReLU of the above
};

struct ForwardCache {
  std::vector<Mat> hidden;    // L+1 of [T x d]
  std::vector<BlockCache> blocks;
  Mat logits;                 // [T x V]
};

void forward(const ToyParams& params, std::span<const Token> tokens, ForwardCache& cache);

/// Accumulates parameter gradients given d(loss)/d(logits).
void backward(const ToyParams& params, std::span<const Token> tokens, const ForwardCache& cache,
              const Mat& d_logits, ToyParams& gradient);

void check_tokens(const ToyParams& params, std::span<const Token> tokens);

}  // namespace ict::toy::detail
