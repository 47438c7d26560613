#include "cppap/loss.hpp"

#include <cmath>

namespace cppap {

namespace {
void check_batch(const Batch& batch) {
  if (batch.predictions.empty() || batch.predictions.size() != batch.labels.size())
    throw DimensionError("loss: batch needs K >= 1 matching predictions and labels");
  for (const auto& p : batch.predictions) {
    if (!std::isfinite(p.mu) || !std::isfinite(p.log_sigma))
      throw NumericError("loss: non-finite prediction");
  }
  for (double y : batch.labels) {
    if (!std::isfinite(y)) throw NumericError("loss: non-finite label");
  }
}
}  // namespace

double probabilistic_loss(const Batch& batch) {
  check_batch(batch);
  double j = 0;
  for (std::size_t k = 0; k < batch.labels.size(); ++k) {
    double sigma = std::exp(batch.predictions[k].log_sigma);
    double zr = (batch.labels[k] - batch.predictions[k].mu) / sigma;
    j += 0.5 * zr * zr + batch.predictions[k].log_sigma;
  }
  j /= double(batch.labels.size());
  if (!std::isfinite(j)) throw NumericError("probabilistic_loss: non-finite result");
  return j;
}

LossGrads probabilistic_loss_grads(const Batch& batch) {
  check_batch(batch);
  std::size_t K = batch.labels.size();
  LossGrads g;
  g.d_mu.resize(K);
  g.d_log_sigma.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    double sigma = std::exp(batch.predictions[k].log_sigma);
    double zr = (batch.labels[k] - batch.predictions[k].mu) / sigma;
    g.d_mu[k] = -zr / sigma / double(K);
    g.d_log_sigma[k] = (1.0 - zr * zr) / double(K);
  }
  return g;
}

double mse(const Batch& batch) {
  check_batch(batch);
  double acc = 0;
  for (std::size_t k = 0; k < batch.labels.size(); ++k) {
    double d = batch.labels[k] - batch.predictions[k].mu;
    acc += d * d;
  }
  return acc / double(batch.labels.size());
}

}  // namespace cppap
