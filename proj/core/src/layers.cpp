#include "cppap/layers.hpp"

namespace cppap {
namespace layers {

Var dense(const Var& x, const Var& w, const Var& b, Activation act) {
  Var y = ag::affine(x, w, b);
  return act == Activation::Swish ? ag::swish(y) : y;
}

Var conv_block(const Var& x, const Var& kernel, const Var& bias,
               const Var& gamma, const Var& beta, ag::BatchNormState& bn,
               const ConvBlockSpec& spec, bool train, std::mt19937_64& rng) {
  Var y = ag::conv2d_same(x, kernel, bias);
  y = ag::batch_norm(y, gamma, beta, train, bn);
  y = ag::dropout(y, spec.dropout_rate, train, rng);
  y = ag::swish(y);
  return ag::avg_pool(y, spec.pool_h, spec.pool_w);
}

Var dot_product_attention(const Var& q, const Var& k, const Var& v) {
  if (q->value.rank() != 3 || !q->value.same_shape(k->value) ||
      !q->value.same_shape(v->value)) {
    throw DimensionError("attention: q,k,v must share shape [B,N,D]");
  }
  Var logits = ag::batched_matmul(q, ag::transpose_last2(k));  // [B,N,N]
  Var weights = ag::softmax(logits, 2);
  Var context = ag::batched_matmul(weights, v);  // [B,N,D]
  return ag::mean_axis1(context);
}

}  // namespace layers
}  // namespace cppap
