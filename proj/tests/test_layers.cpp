#include <doctest.h>

#include <cmath>
#include <random>

#include "cppap/layers.hpp"

using namespace cppap;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("conv2d zero kernel gives constant bias output") {
  std::mt19937_64 rng(1);
  Var x = ag::leaf(Tensor::uniform({1, 4, 4, 2}, -1, 1, rng));
  Var k = ag::leaf(Tensor::zeros({3, 3, 2, 3}));
  Var b = ag::leaf(Tensor({3}, {0.1, -0.2, 0.3}));
  Var y = ag::conv2d_same(x, k, b);
  CHECK(y->value.shape() == std::vector<std::size_t>{1, 4, 4, 3});
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(y->value[i * 3 + 0] == 0.1);
    CHECK(y->value[i * 3 + 1] == -0.2);
    CHECK(y->value[i * 3 + 2] == 0.3);
  }
}

TEST_CASE("conv2d 1x1 input sees only the kernel center") {
  Tensor k = Tensor::zeros({3, 3, 1, 1});
  k[(1 * 3 + 1) * 1 * 1] = 2.5;  // center tap
  k[0] = 99;                     // corner taps all land on zero padding
  k[8] = -99;
  Var y = ag::conv2d_same(ag::leaf(Tensor({1, 1, 1, 1}, {3.0})), ag::leaf(k),
                          ag::leaf(Tensor({1}, {0.5})));
  CHECK(y->value[0] == doctest::Approx(3.0 * 2.5 + 0.5).epsilon(1e-15));
}

TEST_CASE("conv2d matches 6-loop oracle") {
  std::mt19937_64 rng(5);
  Tensor X = Tensor::uniform({1, 5, 5, 2}, -1, 1, rng);
  Tensor K = Tensor::uniform({3, 3, 2, 3}, -1, 1, rng);
  Tensor B = Tensor::uniform({3}, -1, 1, rng);
  Var y = ag::conv2d_same(ag::leaf(X), ag::leaf(K), ag::leaf(B));
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t co = 0; co < 3; ++co) {
        double acc = B[co];
        for (std::size_t u = 0; u < 3; ++u)
          for (std::size_t v = 0; v < 3; ++v)
            for (std::size_t ci = 0; ci < 2; ++ci) {
              std::ptrdiff_t ii = std::ptrdiff_t(i + u) - 1, jj = std::ptrdiff_t(j + v) - 1;
              if (ii < 0 || ii >= 5 || jj < 0 || jj >= 5) continue;
              acc += X[(std::size_t(ii) * 5 + std::size_t(jj)) * 2 + ci] *
                     K[((u * 3 + v) * 2 + ci) * 3 + co];
            }
        CHECK(std::abs(y->value[(i * 5 + j) * 3 + co] - acc) <= 1e-12);
      }
  CHECK_THROWS_AS(ag::conv2d_same(ag::leaf(X), ag::leaf(Tensor::zeros({3, 3, 4, 3})),
                                  ag::leaf(B)),
                  DimensionError);
}

TEST_CASE("batch_norm train-mode identities") {
  ag::BatchNormState st{Tensor::zeros({1}), Tensor::full({1}, 1.0)};
  // Constant batch, gamma=1, beta=0 -> ~0 everywhere.
  Var y = ag::batch_norm(ag::leaf(Tensor({4, 1, 1, 1}, {2, 2, 2, 2})),
                         ag::leaf(Tensor({1}, {1.0})), ag::leaf(Tensor::zeros({1})),
                         true, st);
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(y->value[i]) < 1e-9);

  // gamma=0 -> exactly beta.
  ag::BatchNormState st2{Tensor::zeros({1}), Tensor::full({1}, 1.0)};
  std::mt19937_64 rng(2);
  Var y2 = ag::batch_norm(ag::leaf(Tensor::uniform({4, 1, 1, 1}, -1, 1, rng)),
                          ag::leaf(Tensor::zeros({1})), ag::leaf(Tensor({1}, {0.7})),
                          true, st2);
  for (std::size_t i = 0; i < 4; ++i) CHECK(y2->value[i] == 0.7);

  // Batch {-1, +1} -> +-1/sqrt(1 + 1e-5).
  ag::BatchNormState st3{Tensor::zeros({1}), Tensor::full({1}, 1.0)};
  Var y3 = ag::batch_norm(ag::leaf(Tensor({2, 1, 1, 1}, {-1, 1})),
                          ag::leaf(Tensor({1}, {1.0})), ag::leaf(Tensor::zeros({1})),
                          true, st3);
  double expected = 1.0 / std::sqrt(1.0 + 1e-5);
  CHECK(y3->value[0] == doctest::Approx(-expected).epsilon(1e-12));
  CHECK(y3->value[1] == doctest::Approx(expected).epsilon(1e-12));

  // B=1 in train mode is degenerate.
  ag::BatchNormState st4{Tensor::zeros({1}), Tensor::full({1}, 1.0)};
  CHECK_THROWS_AS(ag::batch_norm(ag::leaf(Tensor({1, 1, 1, 1}, {1.0})),
                                 ag::leaf(Tensor({1}, {1.0})),
                                 ag::leaf(Tensor::zeros({1})), true, st4),
                  DimensionError);
}

TEST_CASE("batch_norm eval mode uses running stats and train updates them") {
  ag::BatchNormState st{Tensor({1}, {1.0}), Tensor({1}, {4.0})};
  Var y = ag::batch_norm(ag::leaf(Tensor({2, 1, 1, 1}, {1.0, 5.0})),
                         ag::leaf(Tensor({1}, {1.0})), ag::leaf(Tensor::zeros({1})),
                         false, st);
  CHECK(y->value[0] == doctest::Approx((1.0 - 1.0) / std::sqrt(4.0 + 1e-5)));
  CHECK(y->value[1] == doctest::Approx((5.0 - 1.0) / std::sqrt(4.0 + 1e-5)));
  CHECK(st.running_mean[0] == 1.0);  // eval never mutates

  ag::BatchNormState st2{Tensor::zeros({1}), Tensor::full({1}, 1.0)};
  ag::batch_norm(ag::leaf(Tensor({2, 1, 1, 1}, {0.0, 2.0})), ag::leaf(Tensor({1}, {1.0})),
                 ag::leaf(Tensor::zeros({1})), true, st2);
  // momentum 0.99: new = 0.99*old + 0.01*batch (batch mean 1, biased var 1).
  CHECK(st2.running_mean[0] == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(st2.running_var[0] == doctest::Approx(0.99 * 1.0 + 0.01 * 1.0).epsilon(1e-12));
}

TEST_CASE("dropout identities and law of large numbers") {
  std::mt19937_64 rng(11);
  Tensor x = Tensor::full({100}, 1.0);
  Var train0 = ag::dropout(ag::leaf(x), 0.0, true, rng);
  Var eval = ag::dropout(ag::leaf(x), 0.5, false, rng);
  for (std::size_t i = 0; i < 100; ++i) {
    CHECK(train0->value[i] == 1.0);
    CHECK(eval->value[i] == 1.0);
  }

  Tensor big = Tensor::full({100000}, 1.0);
  Var dropped = ag::dropout(ag::leaf(big), 0.2, true, rng);
  double mean = 0;
  for (std::size_t i = 0; i < big.size(); ++i) mean += dropped->value[i];
  mean /= double(big.size());
  CHECK(mean > 0.98);
  CHECK(mean < 1.02);
  // Survivors are scaled by 1/(1-rate).
  bool saw_scaled = false;
  for (std::size_t i = 0; i < big.size(); ++i) {
    CHECK((dropped->value[i] == 0.0 || dropped->value[i] == doctest::Approx(1.25)));
    if (dropped->value[i] != 0.0) saw_scaled = true;
  }
  CHECK(saw_scaled);
}

TEST_CASE("swish values") {
  Var y = ag::swish(ag::leaf(Tensor({4}, {0.0, 1.0, 30.0, -30.0})));
  CHECK(y->value[0] == 0.0);
  CHECK(y->value[1] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-12));
  CHECK(y->value[1] == doctest::Approx(0.731058578630).epsilon(1e-10));
  CHECK(y->value[2] == doctest::Approx(30.0).epsilon(1e-9));
  CHECK(std::abs(y->value[3]) < 1e-10);
}

TEST_CASE("avg_pool floor semantics") {
  Var c = ag::avg_pool(ag::leaf(Tensor::full({1, 5, 135, 1}, 3.0)), 2, 2);
  CHECK(c->value.shape() == std::vector<std::size_t>{1, 2, 67, 1});
  for (std::size_t i = 0; i < c->value.size(); ++i) CHECK(c->value[i] == 3.0);

  Var m = ag::avg_pool(ag::leaf(Tensor({1, 2, 2, 1}, {1, 2, 3, 4})), 2, 2);
  CHECK(m->value.size() == 1);
  CHECK(m->value[0] == 2.5);

  CHECK_THROWS_AS(ag::avg_pool(ag::leaf(Tensor({1, 2, 2, 1}, {1, 2, 3, 4})), 3, 2),
                  DimensionError);
}

TEST_CASE("dense identities and oracle composition") {
  Var i3 = ag::leaf(Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  Var zero_b = ag::leaf(Tensor::zeros({3}));
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  Var y = layers::dense(ag::leaf(x), i3, zero_b, Activation::Linear);
  for (std::size_t i = 0; i < 6; ++i) CHECK(y->value[i] == x[i]);

  Var b = ag::leaf(Tensor({3}, {7, 8, 9}));
  Var yb = layers::dense(ag::leaf(Tensor::zeros({2, 3})), i3, b, Activation::Linear);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 3; ++c) CHECK(yb->value[r * 3 + c] == b->value[c]);

  std::mt19937_64 rng(9);
  Tensor W = Tensor::uniform({3, 2}, -1, 1, rng);
  Tensor bb = Tensor::uniform({2}, -1, 1, rng);
  Var ys = layers::dense(ag::leaf(x), ag::leaf(W), ag::leaf(bb), Activation::Swish);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 2; ++c) {
      double pre = bb[c];
      for (std::size_t k = 0; k < 3; ++k) pre += x[r * 3 + k] * W[k * 2 + c];
      CHECK(ys->value[r * 2 + c] == doctest::Approx(pre * sigmoid(pre)).epsilon(1e-12));
    }
}

TEST_CASE("attention uniform weights and N=1") {
  std::mt19937_64 rng(13);
  Tensor V = Tensor::uniform({1, 4, 3}, -1, 1, rng);
  Var z = layers::dot_product_attention(ag::leaf(Tensor::zeros({1, 4, 3})),
                                        ag::leaf(Tensor::uniform({1, 4, 3}, -1, 1, rng)),
                                        ag::leaf(V));
  CHECK(z->value.shape() == std::vector<std::size_t>{1, 3});
  for (std::size_t d = 0; d < 3; ++d) {
    double colmean = 0;
    for (std::size_t nidx = 0; nidx < 4; ++nidx) colmean += V[nidx * 3 + d];
    CHECK(z->value[d] == doctest::Approx(colmean / 4.0).epsilon(1e-12));
  }

  Tensor v1 = Tensor::uniform({1, 1, 3}, -1, 1, rng);
  Var z1 = layers::dot_product_attention(ag::leaf(Tensor::uniform({1, 1, 3}, -9, 9, rng)),
                                         ag::leaf(Tensor::uniform({1, 1, 3}, -9, 9, rng)),
                                         ag::leaf(v1));
  for (std::size_t d = 0; d < 3; ++d) CHECK(z1->value[d] == doctest::Approx(v1[d]));
}

TEST_CASE("attention matches softmax+matmul+mean oracle") {
  std::mt19937_64 rng(17);
  Tensor Q = Tensor::uniform({1, 4, 3}, -1, 1, rng);
  Tensor K = Tensor::uniform({1, 4, 3}, -1, 1, rng);
  Tensor V = Tensor::uniform({1, 4, 3}, -1, 1, rng);
  Var z = layers::dot_product_attention(ag::leaf(Q), ag::leaf(K), ag::leaf(V));

  // Oracle: unscaled logits q k^T, row softmax, context = A v, mean over rows.
  double A[4][4];
  for (int i = 0; i < 4; ++i) {
    double mx = -1e300;
    for (int j = 0; j < 4; ++j) {
      double dot = 0;
      for (int d = 0; d < 3; ++d) dot += Q[i * 3 + d] * K[j * 3 + d];
      A[i][j] = dot;
      mx = std::max(mx, dot);
    }
    double sum = 0;
    for (int j = 0; j < 4; ++j) {
      A[i][j] = std::exp(A[i][j] - mx);
      sum += A[i][j];
    }
    for (int j = 0; j < 4; ++j) A[i][j] /= sum;
  }
  for (int d = 0; d < 3; ++d) {
    double mean = 0;
    for (int i = 0; i < 4; ++i) {
      double ctx = 0;
      for (int j = 0; j < 4; ++j) ctx += A[i][j] * V[std::size_t(j) * 3 + std::size_t(d)];
      mean += ctx;
    }
    CHECK(std::abs(z->value[std::size_t(d)] - mean / 4.0) <= 1e-12);
  }
}

TEST_CASE("attention with identical v rows returns that row") {
  std::mt19937_64 rng(19);
  Tensor row = Tensor::uniform({3}, -1, 1, rng);
  Tensor V({1, 4, 3});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t d = 0; d < 3; ++d) V[i * 3 + d] = row[d];
  Var z = layers::dot_product_attention(ag::leaf(Tensor::uniform({1, 4, 3}, -2, 2, rng)),
                                        ag::leaf(Tensor::uniform({1, 4, 3}, -2, 2, rng)),
                                        ag::leaf(V));
  for (std::size_t d = 0; d < 3; ++d)
    CHECK(z->value[d] == doctest::Approx(row[d]).epsilon(1e-12));
}

TEST_CASE("per-layer gradient checks") {
  std::mt19937_64 rng(23);

  auto scalarize = [](const Var& y) {
    // Sum of swish keeps the objective nonlinear in every entry.
    Var flat = ag::reshape(ag::swish(y), {1, y->value.size()});
    return ag::matmul(flat, ag::leaf(Tensor::full({y->value.size(), 1}, 1.0)));
  };

  SUBCASE("conv2d") {
    Parameter K("K", Tensor::uniform({3, 3, 2, 2}, -0.5, 0.5, rng));
    Parameter B("B", Tensor::uniform({2}, -0.5, 0.5, rng));
    Tensor x = Tensor::uniform({2, 3, 3, 2}, -1, 1, rng);
    auto run = [&]() {
      Var kv = ag::leaf(K.value), bv = ag::leaf(B.value);
      Var loss = scalarize(ag::conv2d_same(ag::leaf(x), kv, bv));
      ag::backward(loss);
      K.grad = kv->grad;
      B.grad = bv->grad;
      return loss->value.item();
    };
    CHECK(grad_check(run, {&K, &B}, 1e-5) < 1e-5);
  }

  SUBCASE("dense") {
    Parameter W("W", Tensor::uniform({3, 2}, -0.5, 0.5, rng));
    Parameter B("B", Tensor::uniform({2}, -0.5, 0.5, rng));
    Tensor x = Tensor::uniform({4, 3}, -1, 1, rng);
    auto run = [&]() {
      Var wv = ag::leaf(W.value), bv = ag::leaf(B.value);
      Var loss = scalarize(layers::dense(ag::leaf(x), wv, bv, Activation::Swish));
      ag::backward(loss);
      W.grad = wv->grad;
      B.grad = bv->grad;
      return loss->value.item();
    };
    CHECK(grad_check(run, {&W, &B}, 1e-5) < 1e-5);
  }

  SUBCASE("batch_norm train mode") {
    Parameter G("G", Tensor::uniform({2}, 0.5, 1.5, rng));
    Parameter B("B", Tensor::uniform({2}, -0.5, 0.5, rng));
    Parameter X("X", Tensor::uniform({3, 2, 2, 2}, -1, 1, rng));
    auto run = [&]() {
      ag::BatchNormState st{Tensor::zeros({2}), Tensor::full({2}, 1.0)};
      Var gv = ag::leaf(G.value), bv = ag::leaf(B.value), xv = ag::leaf(X.value);
      Var loss = scalarize(ag::batch_norm(xv, gv, bv, true, st));
      ag::backward(loss);
      G.grad = gv->grad;
      B.grad = bv->grad;
      X.grad = xv->grad;
      return loss->value.item();
    };
    CHECK(grad_check(run, {&G, &B, &X}, 1e-5) < 1e-5);
  }

  SUBCASE("avg_pool and attention") {
    Parameter X("X", Tensor::uniform({2, 4, 4, 2}, -1, 1, rng));
    auto run = [&]() {
      Var xv = ag::leaf(X.value);
      Var loss = scalarize(ag::avg_pool(xv, 2, 2));
      ag::backward(loss);
      X.grad = xv->grad;
      return loss->value.item();
    };
    CHECK(grad_check(run, {&X}, 1e-5) < 1e-5);

    Parameter Q("Q", Tensor::uniform({1, 3, 2}, -1, 1, rng));
    Parameter K("K", Tensor::uniform({1, 3, 2}, -1, 1, rng));
    Parameter V("V", Tensor::uniform({1, 3, 2}, -1, 1, rng));
    auto run2 = [&]() {
      Var qv = ag::leaf(Q.value), kv = ag::leaf(K.value), vv = ag::leaf(V.value);
      Var loss = scalarize(layers::dot_product_attention(qv, kv, vv));
      ag::backward(loss);
      Q.grad = qv->grad;
      K.grad = kv->grad;
      V.grad = vv->grad;
      return loss->value.item();
    };
    CHECK(grad_check(run2, {&Q, &K, &V}, 1e-5) < 1e-5);
  }
}
