#include "cppap/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace cppap {
namespace ag {

namespace {

Var make_node(Tensor value, std::vector<Var> parents,
              std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->grad = Tensor::zeros(value.shape());
  n->value = std::move(value);
  n->parents = std::move(parents);
  n->backprop = std::move(backprop);
  return n;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var leaf(Tensor value) {
  auto n = std::make_shared<Node>();
  n->grad = Tensor::zeros(value.shape());
  n->value = std::move(value);
  return n;
}

Var add(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value)) {
    throw DimensionError("add: shapes " + Tensor::shape_str(a->value.shape()) +
                         " vs " + Tensor::shape_str(b->value.shape()));
  }
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  return make_node(std::move(out), {a, b}, [](Node& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      n.parents[0]->grad[i] += n.grad[i];
      n.parents[1]->grad[i] += n.grad[i];
    }
  });
}

Var add_bias(const Var& x, const Var& b) {
  std::size_t d = b->value.size();
  if (b->value.rank() != 1 || x->value.shape().back() != d) {
    throw DimensionError("add_bias: bias " + Tensor::shape_str(b->value.shape()) +
                         " vs input " + Tensor::shape_str(x->value.shape()));
  }
  Tensor out = x->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i % d];
  return make_node(std::move(out), {x, b}, [d](Node& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      n.parents[0]->grad[i] += n.grad[i];
      n.parents[1]->grad[i % d] += n.grad[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a->value;
  for (double& v : out.vec()) v *= s;
  return make_node(std::move(out), {a}, [s](Node& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) n.parents[0]->grad[i] += s * n.grad[i];
  });
}

Var swish(const Var& x) {
  Tensor out = x->value;
  for (double& v : out.vec()) v *= sigmoid(v);
  return make_node(std::move(out), {x}, [](Node& n) {
    const Tensor& xin = n.parents[0]->value;
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      double s = sigmoid(xin[i]);
      // d/dx [x*s(x)] = s + x*s*(1-s)
      n.parents[0]->grad[i] += n.grad[i] * (s + xin[i] * s * (1.0 - s));
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  const Tensor& A = a->value;
  const Tensor& B = b->value;
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) {
    throw DimensionError("matmul: " + Tensor::shape_str(A.shape()) + " x " +
                         Tensor::shape_str(B.shape()));
  }
  std::size_t R = A.dim(0), S = A.dim(1), U = B.dim(1);
  Tensor out({R, U});
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t s = 0; s < S; ++s) {
      double av = A[r * S + s];
      for (std::size_t u = 0; u < U; ++u) out[r * U + u] += av * B[s * U + u];
    }
  return make_node(std::move(out), {a, b}, [R, S, U](Node& n) {
    const Tensor& A = n.parents[0]->value;
    const Tensor& B = n.parents[1]->value;
    Tensor& dA = n.parents[0]->grad;
    Tensor& dB = n.parents[1]->grad;
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t u = 0; u < U; ++u) {
        double g = n.grad[r * U + u];
        for (std::size_t s = 0; s < S; ++s) {
          dA[r * S + s] += g * B[s * U + u];
          dB[s * U + u] += g * A[r * S + s];
        }
      }
  });
}

Var batched_matmul(const Var& a, const Var& b) {
  const Tensor& A = a->value;
  const Tensor& B = b->value;
  if (A.rank() != 3 || B.rank() != 3 || A.dim(0) != B.dim(0) || A.dim(2) != B.dim(1)) {
    throw DimensionError("batched_matmul: " + Tensor::shape_str(A.shape()) + " x " +
                         Tensor::shape_str(B.shape()));
  }
  std::size_t Bt = A.dim(0), M = A.dim(1), K = A.dim(2), N = B.dim(2);
  Tensor out({Bt, M, N});
  for (std::size_t bi = 0; bi < Bt; ++bi)
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t k = 0; k < K; ++k) {
        double av = A[(bi * M + m) * K + k];
        for (std::size_t nn = 0; nn < N; ++nn)
          out[(bi * M + m) * N + nn] += av * B[(bi * K + k) * N + nn];
      }
  return make_node(std::move(out), {a, b}, [Bt, M, K, N](Node& n) {
    const Tensor& A = n.parents[0]->value;
    const Tensor& B = n.parents[1]->value;
    Tensor& dA = n.parents[0]->grad;
    Tensor& dB = n.parents[1]->grad;
    for (std::size_t bi = 0; bi < Bt; ++bi)
      for (std::size_t m = 0; m < M; ++m)
        for (std::size_t nn = 0; nn < N; ++nn) {
          double g = n.grad[(bi * M + m) * N + nn];
          for (std::size_t k = 0; k < K; ++k) {
            dA[(bi * M + m) * K + k] += g * B[(bi * K + k) * N + nn];
            dB[(bi * K + k) * N + nn] += g * A[(bi * M + m) * K + k];
          }
        }
  });
}

Var transpose_last2(const Var& x) {
  const Tensor& X = x->value;
  if (X.rank() != 3) throw DimensionError("transpose_last2 expects rank-3 input");
  std::size_t B = X.dim(0), M = X.dim(1), N = X.dim(2);
  Tensor out({B, N, M});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t nn = 0; nn < N; ++nn)
        out[(b * N + nn) * M + m] = X[(b * M + m) * N + nn];
  return make_node(std::move(out), {x}, [B, M, N](Node& n) {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t m = 0; m < M; ++m)
        for (std::size_t nn = 0; nn < N; ++nn)
          n.parents[0]->grad[(b * M + m) * N + nn] += n.grad[(b * N + nn) * M + m];
  });
}

Var affine(const Var& x, const Var& w, const Var& b) {
  const Tensor& X = x->value;
  const Tensor& W = w->value;
  if (W.rank() != 2) throw DimensionError("affine: weight must be rank 2");
  std::size_t din = W.dim(0), dout = W.dim(1);
  if (X.shape().back() != din) {
    throw DimensionError("affine: input last dim " + std::to_string(X.shape().back()) +
                         " vs weight rows " + std::to_string(din));
  }
  if (b->value.size() != dout) throw DimensionError("affine: bias length mismatch");
  std::size_t L = X.size() / din;
  std::vector<std::size_t> out_shape = X.shape();
  out_shape.back() = dout;
  Tensor out(out_shape);
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t o = 0; o < dout; ++o) out[l * dout + o] = b->value[o];
    for (std::size_t i = 0; i < din; ++i) {
      double xv = X[l * din + i];
      for (std::size_t o = 0; o < dout; ++o) out[l * dout + o] += xv * W[i * dout + o];
    }
  }
  return make_node(std::move(out), {x, w, b}, [L, din, dout](Node& n) {
    const Tensor& X = n.parents[0]->value;
    const Tensor& W = n.parents[1]->value;
    Tensor& dX = n.parents[0]->grad;
    Tensor& dW = n.parents[1]->grad;
    Tensor& dB = n.parents[2]->grad;
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t o = 0; o < dout; ++o) {
        double g = n.grad[l * dout + o];
        dB[o] += g;
        for (std::size_t i = 0; i < din; ++i) {
          dX[l * din + i] += g * W[i * dout + o];
          dW[i * dout + o] += g * X[l * din + i];
        }
      }
  });
}

Var softmax(const Var& x, std::size_t axis) {
  const Tensor& X = x->value;
  if (axis >= X.rank()) throw DimensionError("softmax: axis out of range");
  std::size_t L = X.dim(axis);
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < X.rank(); ++i) inner *= X.dim(i);
  std::size_t outer = X.size() / (L * inner);
  Tensor out(X.shape());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      auto at = [&](std::size_t l) { return (o * L + l) * inner + in; };
      double mx = X[at(0)];
      for (std::size_t l = 1; l < L; ++l) mx = std::max(mx, X[at(l)]);
      double sum = 0;
      for (std::size_t l = 0; l < L; ++l) {
        double e = std::exp(X[at(l)] - mx);
        out[at(l)] = e;
        sum += e;
      }
      for (std::size_t l = 0; l < L; ++l) out[at(l)] /= sum;
    }
  return make_node(std::move(out), {x}, [L, inner, outer](Node& n) {
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        auto at = [&](std::size_t l) { return (o * L + l) * inner + in; };
        double dot = 0;
        for (std::size_t l = 0; l < L; ++l) dot += n.grad[at(l)] * n.value[at(l)];
        for (std::size_t l = 0; l < L; ++l)
          n.parents[0]->grad[at(l)] += n.value[at(l)] * (n.grad[at(l)] - dot);
      }
  });
}

Var conv2d_same(const Var& x, const Var& kernel, const Var& bias) {
  const Tensor& X = x->value;
  const Tensor& K = kernel->value;
  if (X.rank() != 4 || K.rank() != 4) throw DimensionError("conv2d: expects [B,H,W,C] and [kh,kw,Cin,Cout]");
  std::size_t B = X.dim(0), H = X.dim(1), W = X.dim(2), Cin = X.dim(3);
  std::size_t kh = K.dim(0), kw = K.dim(1), Cout = K.dim(3);
  if (K.dim(2) != Cin) throw DimensionError("conv2d: channel mismatch");
  if (kh % 2 == 0 || kw % 2 == 0) throw DimensionError("conv2d: kernel dims must be odd");
  if (bias->value.size() != Cout) throw DimensionError("conv2d: bias length mismatch");
  std::size_t ch = kh / 2, cw = kw / 2;
  Tensor out({B, H, W, Cout});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        double* yp = &out[((b * H + i) * W + j) * Cout];
        for (std::size_t co = 0; co < Cout; ++co) yp[co] = bias->value[co];
        for (std::size_t u = 0; u < kh; ++u) {
          std::ptrdiff_t ii = std::ptrdiff_t(i + u) - std::ptrdiff_t(ch);
          if (ii < 0 || ii >= std::ptrdiff_t(H)) continue;
          for (std::size_t v = 0; v < kw; ++v) {
            std::ptrdiff_t jj = std::ptrdiff_t(j + v) - std::ptrdiff_t(cw);
            if (jj < 0 || jj >= std::ptrdiff_t(W)) continue;
            const double* xp = &X[((b * H + ii) * W + jj) * Cin];
            const double* kp = &K[(u * kw + v) * Cin * Cout];
            for (std::size_t ci = 0; ci < Cin; ++ci) {
              double xv = xp[ci];
              const double* kc = kp + ci * Cout;
              for (std::size_t co = 0; co < Cout; ++co) yp[co] += xv * kc[co];
            }
          }
        }
      }
  return make_node(std::move(out), {x, kernel, bias},
                   [B, H, W, Cin, kh, kw, Cout, ch, cw](Node& n) {
    const Tensor& X = n.parents[0]->value;
    const Tensor& K = n.parents[1]->value;
    Tensor& dX = n.parents[0]->grad;
    Tensor& dK = n.parents[1]->grad;
    Tensor& dB = n.parents[2]->grad;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          const double* gp = &n.grad[((b * H + i) * W + j) * Cout];
          for (std::size_t co = 0; co < Cout; ++co) dB[co] += gp[co];
          for (std::size_t u = 0; u < kh; ++u) {
            std::ptrdiff_t ii = std::ptrdiff_t(i + u) - std::ptrdiff_t(ch);
            if (ii < 0 || ii >= std::ptrdiff_t(H)) continue;
            for (std::size_t v = 0; v < kw; ++v) {
              std::ptrdiff_t jj = std::ptrdiff_t(j + v) - std::ptrdiff_t(cw);
              if (jj < 0 || jj >= std::ptrdiff_t(W)) continue;
              const double* xp = &X[((b * H + ii) * W + jj) * Cin];
              double* dxp = &dX[((b * H + ii) * W + jj) * Cin];
              for (std::size_t ci = 0; ci < Cin; ++ci) {
                const double* kc = &K[((u * kw + v) * Cin + ci) * Cout];
                double* dkc = &dK[((u * kw + v) * Cin + ci) * Cout];
                double acc = 0;
                for (std::size_t co = 0; co < Cout; ++co) {
                  acc += gp[co] * kc[co];
                  dkc[co] += gp[co] * xp[ci];
                }
                dxp[ci] += acc;
              }
            }
          }
        }
  });
}

Var avg_pool(const Var& x, std::size_t ph, std::size_t pw) {
  const Tensor& X = x->value;
  if (X.rank() != 4) throw DimensionError("avg_pool expects [B,H,W,C]");
  std::size_t B = X.dim(0), H = X.dim(1), W = X.dim(2), C = X.dim(3);
  std::size_t Ho = H / ph, Wo = W / pw;
  if (Ho < 1 || Wo < 1) {
    throw DimensionError("avg_pool: window (" + std::to_string(ph) + "," +
                         std::to_string(pw) + ") larger than input " +
                         Tensor::shape_str(X.shape()));
  }
  Tensor out({B, Ho, Wo, C});
  double inv = 1.0 / double(ph * pw);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < Ho; ++i)
      for (std::size_t j = 0; j < Wo; ++j)
        for (std::size_t u = 0; u < ph; ++u)
          for (std::size_t v = 0; v < pw; ++v) {
            const double* xp = &X[((b * H + i * ph + u) * W + j * pw + v) * C];
            double* yp = &out[((b * Ho + i) * Wo + j) * C];
            for (std::size_t c = 0; c < C; ++c) yp[c] += xp[c] * inv;
          }
  return make_node(std::move(out), {x}, [B, H, W, C, Ho, Wo, ph, pw, inv](Node& n) {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j)
          for (std::size_t u = 0; u < ph; ++u)
            for (std::size_t v = 0; v < pw; ++v) {
              double* dxp = &n.parents[0]->grad[((b * H + i * ph + u) * W + j * pw + v) * C];
              const double* gp = &n.grad[((b * Ho + i) * Wo + j) * C];
              for (std::size_t c = 0; c < C; ++c) dxp[c] += gp[c] * inv;
            }
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, bool train,
               BatchNormState& state, double epsilon, double momentum) {
  const Tensor& X = x->value;
  if (X.rank() < 2) throw DimensionError("batch_norm expects batched input");
  std::size_t C = X.shape().back();
  if (gamma->value.size() != C || beta->value.size() != C ||
      state.running_mean.size() != C || state.running_var.size() != C) {
    throw DimensionError("batch_norm: per-channel parameter length mismatch");
  }
  std::size_t Nr = X.size() / C;
  Tensor mean({C}), var({C});
  if (train) {
    if (X.dim(0) < 2) throw DimensionError("batch_norm: train mode needs batch >= 2");
    for (std::size_t i = 0; i < X.size(); ++i) mean[i % C] += X[i];
    for (std::size_t c = 0; c < C; ++c) mean[c] /= double(Nr);
    for (std::size_t i = 0; i < X.size(); ++i) {
      double d = X[i] - mean[i % C];
      var[i % C] += d * d;
    }
    for (std::size_t c = 0; c < C; ++c) var[c] /= double(Nr);
    for (std::size_t c = 0; c < C; ++c) {
      state.running_mean[c] = momentum * state.running_mean[c] + (1 - momentum) * mean[c];
      state.running_var[c] = momentum * state.running_var[c] + (1 - momentum) * var[c];
    }
  } else {
    mean = state.running_mean;
    var = state.running_var;
  }
  Tensor inv_sigma({C});
  for (std::size_t c = 0; c < C; ++c) inv_sigma[c] = 1.0 / std::sqrt(var[c] + epsilon);
  Tensor xhat(X.shape());
  Tensor out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) {
    std::size_t c = i % C;
    xhat[i] = (X[i] - mean[c]) * inv_sigma[c];
    out[i] = gamma->value[c] * xhat[i] + beta->value[c];
  }
  auto xh = std::make_shared<Tensor>(std::move(xhat));
  auto is = std::make_shared<Tensor>(std::move(inv_sigma));
  return make_node(std::move(out), {x, gamma, beta}, [C, Nr, train, xh, is](Node& n) {
    const Tensor& g = n.parents[1]->value;
    Tensor& dX = n.parents[0]->grad;
    Tensor& dG = n.parents[1]->grad;
    Tensor& dBt = n.parents[2]->grad;
    Tensor sum_dy({C}), sum_dy_xh({C});
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      std::size_t c = i % C;
      sum_dy[c] += n.grad[i];
      sum_dy_xh[c] += n.grad[i] * (*xh)[i];
    }
    for (std::size_t c = 0; c < C; ++c) {
      dG[c] += sum_dy_xh[c];
      dBt[c] += sum_dy[c];
    }
    if (train) {
      // dx = (gamma/sigma) * (dy - mean(dy) - xhat * mean(dy*xhat))
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        std::size_t c = i % C;
        dX[i] += g[c] * (*is)[c] *
                 (n.grad[i] - sum_dy[c] / double(Nr) - (*xh)[i] * sum_dy_xh[c] / double(Nr));
      }
    } else {
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        std::size_t c = i % C;
        dX[i] += g[c] * (*is)[c] * n.grad[i];
      }
    }
  });
}

Var dropout(const Var& x, double rate, bool train, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0,1)");
  if (!train || rate == 0.0) {
    // Identity pass-through node keeps the graph uniform across modes.
    return make_node(x->value, {x}, [](Node& n) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) n.parents[0]->grad[i] += n.grad[i];
    });
  }
  double keep = 1.0 - rate;
  double inv_keep = 1.0 / keep;
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  auto mask = std::make_shared<Tensor>(x->value.shape());
  Tensor out(x->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = dist(rng) < keep ? inv_keep : 0.0;
    out[i] = x->value[i] * (*mask)[i];
  }
  return make_node(std::move(out), {x}, [mask](Node& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      n.parents[0]->grad[i] += n.grad[i] * (*mask)[i];
  });
}

Var reshape(const Var& x, std::vector<std::size_t> shape) {
  Tensor out = x->value.reshaped(shape);
  return make_node(std::move(out), {x}, [](Node& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) n.parents[0]->grad[i] += n.grad[i];
  });
}

Var stack_last(const std::vector<Var>& xs) {
  if (xs.empty()) throw DimensionError("stack_last: empty input list");
  std::size_t S = xs.size();
  for (const auto& v : xs) {
    if (!v->value.same_shape(xs[0]->value)) throw DimensionError("stack_last: shape mismatch");
  }
  std::size_t L = xs[0]->value.size();
  std::vector<std::size_t> shape = xs[0]->value.shape();
  shape.push_back(S);
  Tensor out(shape);
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t s = 0; s < S; ++s) out[l * S + s] = xs[s]->value[l];
  std::vector<Var> parents(xs.begin(), xs.end());
  return make_node(std::move(out), std::move(parents), [L, S](Node& n) {
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t s = 0; s < S; ++s) n.parents[s]->grad[l] += n.grad[l * S + s];
  });
}

Var concat_last(const std::vector<Var>& xs) {
  if (xs.empty()) throw DimensionError("concat_last: empty input list");
  std::size_t B = xs[0]->value.dim(0);
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& v : xs) {
    if (v->value.rank() != 2 || v->value.dim(0) != B)
      throw DimensionError("concat_last expects [B,Di] inputs with matching B");
    widths.push_back(v->value.dim(1));
    total += widths.back();
  }
  Tensor out({B, total});
  for (std::size_t b = 0; b < B; ++b) {
    std::size_t off = 0;
    for (std::size_t s = 0; s < xs.size(); ++s) {
      for (std::size_t i = 0; i < widths[s]; ++i)
        out[b * total + off + i] = xs[s]->value[b * widths[s] + i];
      off += widths[s];
    }
  }
  std::vector<Var> parents(xs.begin(), xs.end());
  return make_node(std::move(out), std::move(parents), [B, total, widths](Node& n) {
    for (std::size_t b = 0; b < B; ++b) {
      std::size_t off = 0;
      for (std::size_t s = 0; s < n.parents.size(); ++s) {
        for (std::size_t i = 0; i < widths[s]; ++i)
          n.parents[s]->grad[b * widths[s] + i] += n.grad[b * total + off + i];
        off += widths[s];
      }
    }
  });
}

Var slice_last(const Var& x, std::size_t index) {
  const Tensor& X = x->value;
  if (X.rank() != 2 || index >= X.dim(1)) throw DimensionError("slice_last: bad index");
  std::size_t B = X.dim(0), D = X.dim(1);
  Tensor out({B});
  for (std::size_t b = 0; b < B; ++b) out[b] = X[b * D + index];
  return make_node(std::move(out), {x}, [B, D, index](Node& n) {
    for (std::size_t b = 0; b < B; ++b) n.parents[0]->grad[b * D + index] += n.grad[b];
  });
}

Var mean_axis1(const Var& x) {
  const Tensor& X = x->value;
  if (X.rank() != 3) throw DimensionError("mean_axis1 expects [B,N,D]");
  std::size_t B = X.dim(0), N = X.dim(1), D = X.dim(2);
  Tensor out({B, D});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t nn = 0; nn < N; ++nn)
      for (std::size_t d = 0; d < D; ++d)
        out[b * D + d] += X[(b * N + nn) * D + d] / double(N);
  return make_node(std::move(out), {x}, [B, N, D](Node& n) {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t nn = 0; nn < N; ++nn)
        for (std::size_t d = 0; d < D; ++d)
          n.parents[0]->grad[(b * N + nn) * D + d] += n.grad[b * D + d] / double(N);
  });
}

Var broadcast_rows(const Var& h, std::size_t n) {
  const Tensor& H = h->value;
  if (H.rank() != 2) throw DimensionError("broadcast_rows expects [B,D]");
  std::size_t B = H.dim(0), D = H.dim(1);
  Tensor out({B, n, D});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t d = 0; d < D; ++d) out[(b * n + i) * D + d] = H[b * D + d];
  return make_node(std::move(out), {h}, [B, n, D](Node& nd) {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t d = 0; d < D; ++d)
          nd.parents[0]->grad[b * D + d] += nd.grad[(b * n + i) * D + d];
  });
}

Var broadcast_plane(const Var& g, std::size_t n, std::size_t d) {
  const Tensor& G = g->value;
  if (G.rank() != 1) throw DimensionError("broadcast_plane expects [B]");
  std::size_t B = G.dim(0);
  Tensor out({B, n, d});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < n * d; ++i) out[b * n * d + i] = G[b];
  return make_node(std::move(out), {g}, [B, n, d](Node& nd) {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < n * d; ++i) nd.parents[0]->grad[b] += nd.grad[b * n * d + i];
  });
}

Var channel_compress(const Var& x, const Var& w, const Var& b0) {
  const Tensor& X = x->value;
  if (X.rank() != 4) throw DimensionError("channel_compress expects [B,N,D,S]");
  std::size_t S = X.shape().back();
  if (w->value.size() != S || b0->value.size() != 1)
    throw DimensionError("channel_compress: weight/bias shape mismatch");
  std::size_t L = X.size() / S;
  Tensor out({X.dim(0), X.dim(1), X.dim(2)});
  for (std::size_t l = 0; l < L; ++l) {
    double acc = b0->value[0];
    for (std::size_t s = 0; s < S; ++s) acc += X[l * S + s] * w->value[s];
    out[l] = acc;
  }
  return make_node(std::move(out), {x, w, b0}, [L, S](Node& n) {
    const Tensor& X = n.parents[0]->value;
    const Tensor& W = n.parents[1]->value;
    for (std::size_t l = 0; l < L; ++l) {
      double g = n.grad[l];
      n.parents[2]->grad[0] += g;
      for (std::size_t s = 0; s < S; ++s) {
        n.parents[0]->grad[l * S + s] += g * W[s];
        n.parents[1]->grad[s] += g * X[l * S + s];
      }
    }
  });
}

Var gaussian_nll(const Var& mu, const Var& log_sigma, const Tensor& y) {
  const Tensor& M = mu->value;
  const Tensor& LS = log_sigma->value;
  if (M.rank() != 1 || !M.same_shape(LS) || !M.same_shape(y))
    throw DimensionError("gaussian_nll: mu/log_sigma/y must be matching vectors");
  M.check_finite("gaussian_nll mu");
  LS.check_finite("gaussian_nll log_sigma");
  std::size_t K = M.size();
  double J = 0;
  for (std::size_t k = 0; k < K; ++k) {
    double s = std::exp(LS[k]);
    double zr = (y[k] - M[k]) / s;
    J += 0.5 * zr * zr + LS[k];
  }
  J /= double(K);
  Tensor out = Tensor::scalar(J);
  out.check_finite("gaussian_nll output");
  auto yt = std::make_shared<Tensor>(y);
  return make_node(std::move(out), {mu, log_sigma}, [K, yt](Node& n) {
    const Tensor& M = n.parents[0]->value;
    const Tensor& LS = n.parents[1]->value;
    double g = n.grad[0];
    for (std::size_t k = 0; k < K; ++k) {
      double s = std::exp(LS[k]);
      double zr = ((*yt)[k] - M[k]) / s;
      n.parents[0]->grad[k] += g * (-zr / s) / double(K);
      n.parents[1]->grad[k] += g * (1.0 - zr * zr) / double(K);
    }
  });
}

void backward(const Var& loss) {
  if (loss->value.size() != 1) throw DimensionError("backward: loss must be scalar");
  loss->value.check_finite("loss");
  // Iterative post-order DFS; reverse gives a valid reverse-topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.get(), 0}};
  visited.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) std::fill(n->grad.vec().begin(), n->grad.vec().end(), 0.0);
  loss->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backprop) (*it)->backprop(**it);
  }
}

}  // namespace ag

double grad_check(const std::function<double()>& run,
                  std::vector<Parameter*> params, double h) {
  double f0 = run();
  if (!std::isfinite(f0)) throw NumericError("grad_check: non-finite objective");
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);
  double max_rel = 0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter* p = params[pi];
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      double orig = p->value[i];
      p->value[i] = orig + h;
      double fp = run();
      p->value[i] = orig - h;
      double fm = run();
      p->value[i] = orig;
      double fd = (fp - fm) / (2 * h);
      double a = analytic[pi][i];
      double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-8});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace cppap
