#pragma once

#include "cppap/autodiff.hpp"

namespace cppap {

enum class Activation { Swish, Linear };

struct ConvBlockSpec {
  std::size_t filters = 0;
  std::size_t pool_h = 2;
  std::size_t pool_w = 2;
  double dropout_rate = 0.1;
  // Kernel is always 3x3.
};

struct DenseSpec {
  std::size_t units = 0;
  Activation activation = Activation::Linear;
};

namespace layers {

// Affine map along the last axis, then activation.
Var dense(const Var& x, const Var& w, const Var& b, Activation act);

// conv(3x3, same) -> batch norm -> dropout -> swish -> avg pool.
Var conv_block(const Var& x, const Var& kernel, const Var& bias,
               const Var& gamma, const Var& beta, ag::BatchNormState& bn,
               const ConvBlockSpec& spec, bool train, std::mt19937_64& rng);

// Unscaled (Luong) dot-product attention. q,k,v are [B,N,D]; rows of
// softmax(q k^T) weight v, and the N context rows are mean-pooled to [B,D].
Var dot_product_attention(const Var& q, const Var& k, const Var& v);

}  // namespace layers
}  // namespace cppap
