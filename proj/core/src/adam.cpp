#include "cppap/adam.hpp"

#include <cmath>

namespace cppap {

AdamState AdamState::init(const std::vector<std::size_t>& shape, double lr) {
  AdamState s;
  s.m = Tensor::zeros(shape);
  s.v = Tensor::zeros(shape);
  s.lr = lr;
  return s;
}

void adam_step(Parameter& param, AdamState& state) {
  if (param.value.size() == 0) throw DimensionError("adam_step: zero-length parameter");
  if (!param.value.same_shape(param.grad) || !param.value.same_shape(state.m) ||
      !param.value.same_shape(state.v)) {
    throw DimensionError("adam_step: shape mismatch for " + param.name);
  }
  param.grad.check_finite("gradient of " + param.name);
  state.step += 1;
  double t = double(state.step);
  double bc1 = 1.0 - std::pow(state.beta1, t);
  double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < param.value.size(); ++i) {
    double g = param.grad[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    double mhat = state.m[i] / bc1;
    double vhat = state.v[i] / bc2;
    param.value[i] -= state.lr * mhat / (std::sqrt(vhat) + state.epsilon);
  }
  param.value.check_finite("updated " + param.name);
}

}  // namespace cppap
