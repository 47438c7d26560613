#include <doctest.h>

#include <cmath>
#include <random>

#include "cppap/loss.hpp"

using namespace cppap;

TEST_CASE("probabilistic loss identities") {
  Batch perfect{{{0.3, 0.0}}, {0.3}};
  CHECK(std::abs(probabilistic_loss(perfect)) <= 1e-12);

  Batch unit_err{{{0.0, 0.0}}, {1.0}};
  CHECK(std::abs(probabilistic_loss(unit_err) - 0.5) <= 1e-12);

  Batch pair{{{0.0, 0.0}, {0.0, 1.0}}, {0.0, 0.0}};
  // (0 + (0/e)^2/2 + 1) / 2 = 0.5
  CHECK(std::abs(probabilistic_loss(pair) - 0.5) <= 1e-12);
}

TEST_CASE("loss is monotone in log_sigma once mu is exact") {
  Batch a{{{0.5, 0.0}}, {0.5}};
  Batch b{{{0.5, 1.0}}, {0.5}};
  CHECK(probabilistic_loss(a) < probabilistic_loss(b));
}

TEST_CASE("closed-form gradients match finite differences") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(-1, 1);
  Batch batch;
  for (int i = 0; i < 5; ++i) {
    batch.predictions.push_back({u(rng), 0.5 * u(rng)});
    batch.labels.push_back(u(rng));
  }
  LossGrads g = probabilistic_loss_grads(batch);
  const double h = 1e-6;
  for (std::size_t k = 0; k < 5; ++k) {
    Batch bp = batch, bm = batch;
    bp.predictions[k].mu += h;
    bm.predictions[k].mu -= h;
    double fd = (probabilistic_loss(bp) - probabilistic_loss(bm)) / (2 * h);
    CHECK(std::abs(g.d_mu[k] - fd) <= 1e-8);

    bp = batch;
    bm = batch;
    bp.predictions[k].log_sigma += h;
    bm.predictions[k].log_sigma -= h;
    fd = (probabilistic_loss(bp) - probabilistic_loss(bm)) / (2 * h);
    CHECK(std::abs(g.d_log_sigma[k] - fd) <= 1e-8);

    // Closed forms: dJ/dmu = -(y-mu)/(K sigma^2), dJ/dlog_sigma = (1-z^2)/K.
    double s = std::exp(batch.predictions[k].log_sigma);
    double z = (batch.labels[k] - batch.predictions[k].mu) / s;
    CHECK(g.d_mu[k] == doctest::Approx(-z / (5.0 * s)).epsilon(1e-12));
    CHECK(g.d_log_sigma[k] == doctest::Approx((1.0 - z * z) / 5.0).epsilon(1e-12));
  }
}

TEST_CASE("mse identities and oracle") {
  Batch perfect{{{0.2, 0.0}, {-0.9, 0.3}}, {0.2, -0.9}};
  CHECK(mse(perfect) == 0.0);

  Batch unit{{{0.0, 0.0}, {0.0, 0.0}}, {1.0, -1.0}};
  CHECK(mse(unit) == doctest::Approx(1.0).epsilon(1e-15));

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  Batch b;
  double acc = 0;
  for (int i = 0; i < 5; ++i) {
    double y = u(rng), mu = u(rng);
    b.predictions.push_back({mu, 0.0});
    b.labels.push_back(y);
    acc += (y - mu) * (y - mu);
  }
  CHECK(mse(b) == doctest::Approx(acc / 5.0).epsilon(1e-12));
  CHECK(mse(b) >= 0.0);
}

TEST_CASE("batch validation") {
  Batch empty;
  CHECK_THROWS_AS(probabilistic_loss(empty), DimensionError);
  Batch mismatch{{{0, 0}}, {0.1, 0.2}};
  CHECK_THROWS_AS(probabilistic_loss(mismatch), DimensionError);
  Batch nan{{{std::nan(""), 0}}, {0.1}};
  CHECK_THROWS_AS(probabilistic_loss(nan), NumericError);
}
