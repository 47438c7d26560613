#pragma once

#include <functional>
#include <memory>
#include <random>
#include <vector>

#include "cppap/tensor.hpp"

namespace cppap {

// One value in the computation graph. Forward ops allocate nodes eagerly;
// backward() walks the graph in reverse topological order. Graph mechanics
// are private to this header pair; callers see only Var-valued ops.
struct Node {
  Tensor value;
  Tensor grad;  // same shape as value, zeroed until backward()
  std::vector<std::shared_ptr<Node>> parents;
  // Pushes this node's grad into parents' grads. Null for leaves.
  std::function<void(Node&)> backprop;
};

using Var = std::shared_ptr<Node>;

namespace ag {

Var leaf(Tensor value);

// Elementwise / broadcast arithmetic.
Var add(const Var& a, const Var& b);              // same shape
Var add_bias(const Var& x, const Var& b);         // x[...,D] + b[D]
Var scale(const Var& a, double s);
Var swish(const Var& x);                          // x * sigmoid(x)

// Linear algebra.
Var matmul(const Var& a, const Var& b);           // [R,S] x [S,U]
Var batched_matmul(const Var& a, const Var& b);   // [B,M,K] x [B,K,N]
Var transpose_last2(const Var& x);                // [B,M,N] -> [B,N,M]
Var affine(const Var& x, const Var& w, const Var& b);  // [...,Din] -> [...,Dout]

// Max-subtracted softmax along `axis`.
Var softmax(const Var& x, std::size_t axis);

// Convolutional stack pieces; x is [B,H,W,C].
Var conv2d_same(const Var& x, const Var& kernel, const Var& bias);
Var avg_pool(const Var& x, std::size_t ph, std::size_t pw);
struct BatchNormState {
  Tensor running_mean;  // [C]
  Tensor running_var;   // [C]
};
Var batch_norm(const Var& x, const Var& gamma, const Var& beta,
               bool train, BatchNormState& state,
               double epsilon = 1e-5, double momentum = 0.99);
Var dropout(const Var& x, double rate, bool train, std::mt19937_64& rng);

// Shape plumbing.
Var reshape(const Var& x, std::vector<std::size_t> shape);
Var stack_last(const std::vector<Var>& xs);       // S tensors [B,N,D] -> [B,N,D,S]
Var concat_last(const std::vector<Var>& xs);      // [B,Di] -> [B, sum Di]
Var slice_last(const Var& x, std::size_t index);  // [B,D] -> [B]
Var mean_axis1(const Var& x);                     // [B,N,D] -> [B,D]
Var broadcast_rows(const Var& h, std::size_t n);  // [B,D] -> [B,N,D]
Var broadcast_plane(const Var& g, std::size_t n, std::size_t d);  // [B] -> [B,N,D]

// Compresses the stacked modality axis: y[b,n,d] = sum_s x[b,n,d,s] w[s] + b0.
Var channel_compress(const Var& x, const Var& w, const Var& b0);

// Eq-style Gaussian NLL over a batch: mean of ((y-mu)/sigma)^2/2 + log sigma.
Var gaussian_nll(const Var& mu, const Var& log_sigma, const Tensor& y);

// Seeds d(loss)=1 and accumulates grads through the graph. loss must be scalar.
void backward(const Var& loss);

}  // namespace ag

// Named trainable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros(value.shape())) {}
};

// Central-difference check of a scalar function against analytic grads.
// `run` must recompute the loss and refresh every param's grad field.
// Returns max over all parameter entries of the relative error.
double grad_check(const std::function<double()>& run,
                  std::vector<Parameter*> params, double h = 1e-5);

}  // namespace cppap
