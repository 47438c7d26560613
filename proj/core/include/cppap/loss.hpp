#pragma once

#include <vector>

#include "cppap/autodiff.hpp"
#include "cppap/model.hpp"

namespace cppap {

struct Batch {
  std::vector<PredictedDistribution> predictions;
  std::vector<double> labels;  // in [-1,1]
};

// J = (1/K) sum_k [ ((y_k - mu_k)/sigma_k)^2 / 2 + log sigma_k ].
double probabilistic_loss(const Batch& batch);

// Closed-form gradients of J w.r.t. mu_k and log sigma_k.
struct LossGrads {
  std::vector<double> d_mu;
  std::vector<double> d_log_sigma;
};
LossGrads probabilistic_loss_grads(const Batch& batch);

// Squared-error metric on the fusion-appropriate point prediction. For LF
// checkpoints the predictions must already be the adapter outputs (mu').
double mse(const Batch& batch);

}  // namespace cppap
