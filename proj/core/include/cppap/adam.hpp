#pragma once

#include "cppap/autodiff.hpp"
#include "cppap/tensor.hpp"

namespace cppap {

struct AdamState {
  std::size_t step = 0;
  Tensor m;
  Tensor v;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState init(const std::vector<std::size_t>& shape, double lr = 1e-4);
};

// Bias-corrected Adam update; consumes param.grad, increments state.step.
void adam_step(Parameter& param, AdamState& state);

}  // namespace cppap
