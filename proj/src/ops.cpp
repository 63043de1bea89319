#include "gknet/ops.hpp"

#include <cmath>

#include "gknet/kernels.hpp"

namespace gknet::ops {

namespace {

template <typename T>
void require_same(const Var<T>& a, const Var<T>& b, const char* op) {
  GK_REQUIRE(a.shape() == b.shape(),
             op << ": shape mismatch " << to_string(a.shape()) << " vs " << to_string(b.shape()));
}

template <typename T>
Var<T> unary(const Var<T>& x, T (*f)(T), T (*df)(T, T)) {
  Tensor<T> y(x.shape());
  const std::size_t n = y.size();
  const T* xv = x.value().data();
  for (std::size_t i = 0; i < n; ++i) y[i] = f(xv[i]);
  return make_result<T>(std::move(y), {x}, [df](Node<T>& self) {
    T* gx = self.input_grad(0);
    if (!gx) return;
    const T* xv = self.input(0).data();
    const T* yv = self.value.data();
    const T* g = self.grad.data();
    for (std::size_t i = 0; i < self.value.size(); ++i) gx[i] += g[i] * df(xv[i], yv[i]);
  });
}

template <typename T>
T relu_f(T x) {
  return x > T(0) ? x : T(0);
}
template <typename T>
T relu_df(T x, T) {
  return x > T(0) ? T(1) : T(0);
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

template <typename T>
T gelu_f(T x) {
  const T t = std::tanh(T(kGeluC) * (x + T(kGeluA) * x * x * x));
  return T(0.5) * x * (T(1) + t);
}
template <typename T>
T gelu_df(T x, T) {
  const T t = std::tanh(T(kGeluC) * (x + T(kGeluA) * x * x * x));
  return T(0.5) * (T(1) + t) +
         T(0.5) * x * (T(1) - t * t) * T(kGeluC) * (T(1) + T(3 * kGeluA) * x * x);
}

template <typename T>
T sigmoid_f(T x) {
  return T(1) / (T(1) + std::exp(-x));
}
template <typename T>
T sigmoid_df(T, T y) {
  return y * (T(1) - y);
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same(a, b, "add");
  Tensor<T> y = a.value();
  const T* bv = b.value().data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return make_result<T>(std::move(y), {a, b}, [](Node<T>& self) {
    const T* g = self.grad.data();
    for (std::size_t k = 0; k < 2; ++k)
      if (T* gi = self.input_grad(k))
        for (std::size_t i = 0; i < self.value.size(); ++i) gi[i] += g[i];
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same(a, b, "sub");
  Tensor<T> y = a.value();
  const T* bv = b.value().data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  return make_result<T>(std::move(y), {a, b}, [](Node<T>& self) {
    const T* g = self.grad.data();
    if (T* ga = self.input_grad(0))
      for (std::size_t i = 0; i < self.value.size(); ++i) ga[i] += g[i];
    if (T* gb = self.input_grad(1))
      for (std::size_t i = 0; i < self.value.size(); ++i) gb[i] -= g[i];
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same(a, b, "mul");
  Tensor<T> y = a.value();
  const T* bv = b.value().data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  return make_result<T>(std::move(y), {a, b}, [](Node<T>& self) {
    const T* g = self.grad.data();
    const T* av = self.input(0).data();
    const T* bv = self.input(1).data();
    if (T* ga = self.input_grad(0))
      for (std::size_t i = 0; i < self.value.size(); ++i) ga[i] += g[i] * bv[i];
    if (T* gb = self.input_grad(1))
      for (std::size_t i = 0; i < self.value.size(); ++i) gb[i] += g[i] * av[i];
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= s;
  return make_result<T>(std::move(y), {a}, [s](Node<T>& self) {
    if (T* ga = self.input_grad(0))
      for (std::size_t i = 0; i < self.value.size(); ++i) ga[i] += s * self.grad[i];
  });
}

template <typename T>
Var<T> mul_scalar(const Var<T>& x, const Var<T>& s) {
  GK_REQUIRE(s.value().size() == 1, "mul_scalar expects a single-element scale");
  const T sv = s.value()[0];
  Tensor<T> y = x.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= sv;
  return make_result<T>(std::move(y), {x, s}, [](Node<T>& self) {
    const T* g = self.grad.data();
    const T* xv = self.input(0).data();
    const T sv = self.input(1)[0];
    if (T* gx = self.input_grad(0))
      for (std::size_t i = 0; i < self.value.size(); ++i) gx[i] += g[i] * sv;
    if (T* gs = self.input_grad(1)) {
      T acc = 0;
      for (std::size_t i = 0; i < self.value.size(); ++i) acc += g[i] * xv[i];
      gs[0] += acc;
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T s = 0;
  for (T v : x.value().values()) s += v;
  return make_result<T>(Tensor<T>({1}, s), {x}, [](Node<T>& self) {
    if (T* gx = self.input_grad(0))
      for (std::size_t i = 0; i < self.input(0).size(); ++i) gx[i] += self.grad[0];
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return unary<T>(x, &relu_f<T>, &relu_df<T>);
}
template <typename T>
Var<T> gelu(const Var<T>& x) {
  return unary<T>(x, &gelu_f<T>, &gelu_df<T>);
}
template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return unary<T>(x, &sigmoid_f<T>, &sigmoid_df<T>);
}

namespace {

template <typename T>
kernels::ConvGeometry conv_geometry(const Var<T>& x, const Var<T>& w, const Var<T>& bias,
                                    int stride, int pad) {
  GK_REQUIRE(x.value().rank() == 3, "conv2d input must be [C,H,W], got " << to_string(x.shape()));
  GK_REQUIRE(w.value().rank() == 4 && w.dim(2) == w.dim(3),
             "conv2d weight must be [O,C,k,k], got " << to_string(w.shape()));
  GK_REQUIRE(w.dim(1) == x.dim(0), "conv2d channel mismatch: weight " << to_string(w.shape())
                                                                      << " input " << to_string(x.shape()));
  GK_REQUIRE(!bias.defined() || bias.value().size() == static_cast<std::size_t>(w.dim(0)),
             "conv2d bias size mismatch");
  kernels::ConvGeometry g;
  g.in_channels = x.dim(0);
  g.height = x.dim(1);
  g.width = x.dim(2);
  g.out_channels = w.dim(0);
  g.kernel = w.dim(2);
  g.stride = stride;
  g.pad = pad;
  GK_REQUIRE(g.out_height() > 0 && g.out_width() > 0, "conv2d produces an empty output");
  return g;
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, int stride, int pad) {
  const kernels::ConvGeometry g = conv_geometry(x, w, bias, stride, pad);
  Tensor<T> y({g.out_channels, g.out_height(), g.out_width()});
  std::vector<T> scratch;
  kernels::conv2d_forward<T>(x.value().data(), w.value().data(),
                             bias.defined() ? bias.value().data() : nullptr, g, y.data(), scratch);
  std::vector<Var<T>> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<T>(std::move(y), inputs, [g](Node<T>& self) {
    std::vector<T> scratch;
    T* gb = self.inputs.size() > 2 ? self.input_grad(2) : nullptr;
    kernels::conv2d_backward<T>(self.input(0).data(), self.input(1).data(), self.grad.data(), g,
                                self.input_grad(0), self.input_grad(1), gb, scratch);
  });
}

template <typename T>
Var<T> conv2d_mean(const Var<T>& x, const Var<T>& w, const Var<T>& bias, int stride, int pad) {
  const kernels::ConvGeometry g = conv_geometry(x, w, bias, stride, pad);
  Tensor<T> y({g.out_channels});
  kernels::conv2d_mean_forward<T>(x.value().data(), w.value().data(),
                                  bias.defined() ? bias.value().data() : nullptr, g, y.data());
  std::vector<Var<T>> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<T>(std::move(y), inputs, [g](Node<T>& self) {
    T* gb = self.inputs.size() > 2 ? self.input_grad(2) : nullptr;
    kernels::conv2d_mean_backward<T>(self.input(0).data(), self.input(1).data(), self.grad.data(),
                                     g, self.input_grad(0), self.input_grad(1), gb);
  });
}

template <typename T>
Var<T> upsample2x(const Var<T>& x) {
  GK_REQUIRE(x.value().rank() == 3, "upsample2x expects [C,H,W]");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<T> y({c, 2 * h, 2 * w});
  kernels::upsample2x_forward<T>(x.value().data(), c, h, w, y.data());
  return make_result<T>(std::move(y), {x}, [c, h, w](Node<T>& self) {
    if (T* gx = self.input_grad(0)) kernels::upsample2x_backward<T>(self.grad.data(), c, h, w, gx);
  });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  GK_REQUIRE(x.value().rank() == 3, "global_avg_pool expects [C,H,W]");
  const int c = x.dim(0);
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  Tensor<T> y({c});
  for (int i = 0; i < c; ++i) {
    T s = 0;
    const T* p = x.value().data() + i * plane;
    for (std::size_t j = 0; j < plane; ++j) s += p[j];
    y[i] = s / static_cast<T>(plane);
  }
  return make_result<T>(std::move(y), {x}, [c, plane](Node<T>& self) {
    T* gx = self.input_grad(0);
    if (!gx) return;
    for (int i = 0; i < c; ++i) {
      const T g = self.grad[i] / static_cast<T>(plane);
      for (std::size_t j = 0; j < plane; ++j) gx[i * plane + j] += g;
    }
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const bool vector_input = x.value().rank() == 1;
  GK_REQUIRE(vector_input || x.value().rank() == 2, "linear expects [R,in] or [in]");
  GK_REQUIRE(w.value().rank() == 2, "linear weight must be [out,in]");
  const int rows = vector_input ? 1 : x.dim(0);
  const int in = vector_input ? x.dim(0) : x.dim(1);
  const int out = w.dim(0);
  GK_REQUIRE(w.dim(1) == in, "linear: weight " << to_string(w.shape()) << " vs input "
                                               << to_string(x.shape()));
  GK_REQUIRE(!b.defined() || b.value().size() == static_cast<std::size_t>(out),
             "linear bias size mismatch");
  Tensor<T> y(vector_input ? Shape{out} : Shape{rows, out});
  kernels::gemm<T>(false, true, rows, out, in, T(1), x.value().data(), w.value().data(), T(0),
                   y.data());
  if (b.defined())
    for (int r = 0; r < rows; ++r)
      for (int o = 0; o < out; ++o) y[static_cast<std::size_t>(r) * out + o] += b.value()[o];
  std::vector<Var<T>> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make_result<T>(std::move(y), inputs, [rows, in, out](Node<T>& self) {
    const T* g = self.grad.data();
    if (T* gx = self.input_grad(0))
      kernels::gemm<T>(false, false, rows, in, out, T(1), g, self.input(1).data(), T(1), gx);
    if (T* gw = self.input_grad(1))
      kernels::gemm<T>(true, false, out, in, rows, T(1), g, self.input(0).data(), T(1), gw);
    if (self.inputs.size() > 2)
      if (T* gb = self.input_grad(2))
        for (int r = 0; r < rows; ++r)
          for (int o = 0; o < out; ++o) gb[o] += g[static_cast<std::size_t>(r) * out + o];
  });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool trans_a, bool trans_b) {
  GK_REQUIRE(a.value().rank() == 2 && b.value().rank() == 2, "matmul expects matrices");
  const int m = trans_a ? a.dim(1) : a.dim(0);
  const int k = trans_a ? a.dim(0) : a.dim(1);
  const int kb = trans_b ? b.dim(1) : b.dim(0);
  const int n = trans_b ? b.dim(0) : b.dim(1);
  GK_REQUIRE(k == kb, "matmul inner dimension mismatch: " << to_string(a.shape()) << " x "
                                                          << to_string(b.shape()));
  Tensor<T> y({m, n});
  kernels::gemm<T>(trans_a, trans_b, m, n, k, T(1), a.value().data(), b.value().data(), T(0),
                   y.data());
  return make_result<T>(std::move(y), {a, b}, [=](Node<T>& self) {
    const T* g = self.grad.data();
    const T* av = self.input(0).data();
    const T* bv = self.input(1).data();
    // C = op(A) op(B); dop(A) = G op(B)^T, dop(B) = op(A)^T G.
    if (T* ga = self.input_grad(0)) {
      if (!trans_a)
        kernels::gemm<T>(false, !trans_b, m, k, n, T(1), g, bv, T(1), ga);
      else
        kernels::gemm<T>(trans_b, true, k, m, n, T(1), bv, g, T(1), ga);
    }
    if (T* gb = self.input_grad(1)) {
      if (!trans_b)
        kernels::gemm<T>(!trans_a, false, k, n, m, T(1), av, g, T(1), gb);
      else
        kernels::gemm<T>(true, trans_a, n, k, m, T(1), g, av, T(1), gb);
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> y = x.value().reshaped(std::move(shape));
  return make_result<T>(std::move(y), {x}, [](Node<T>& self) {
    if (T* gx = self.input_grad(0))
      for (std::size_t i = 0; i < self.value.size(); ++i) gx[i] += self.grad[i];
  });
}

template <typename T>
Var<T> transpose(const Var<T>& x) {
  GK_REQUIRE(x.value().rank() == 2, "transpose expects a matrix");
  const int r = x.dim(0), c = x.dim(1);
  Tensor<T> y({c, r});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) y.at(j, i) = x.value().at(i, j);
  return make_result<T>(std::move(y), {x}, [r, c](Node<T>& self) {
    if (T* gx = self.input_grad(0))
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) gx[static_cast<std::size_t>(i) * c + j] += self.grad.at(j, i);
  });
}

template <typename T>
Var<T> softmax_rows(const Var<T>& x) {
  GK_REQUIRE(x.value().rank() == 2, "softmax_rows expects a matrix");
  const int r = x.dim(0), c = x.dim(1);
  Tensor<T> y({r, c});
  for (int i = 0; i < r; ++i) {
    const T* xi = x.value().data() + static_cast<std::size_t>(i) * c;
    T* yi = y.data() + static_cast<std::size_t>(i) * c;
    T mx = xi[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, xi[j]);
    T s = 0;
    for (int j = 0; j < c; ++j) s += (yi[j] = std::exp(xi[j] - mx));
    for (int j = 0; j < c; ++j) yi[j] /= s;
  }
  return make_result<T>(std::move(y), {x}, [r, c](Node<T>& self) {
    T* gx = self.input_grad(0);
    if (!gx) return;
    for (int i = 0; i < r; ++i) {
      const T* yi = self.value.data() + static_cast<std::size_t>(i) * c;
      const T* gi = self.grad.data() + static_cast<std::size_t>(i) * c;
      T dot = 0;
      for (int j = 0; j < c; ++j) dot += gi[j] * yi[j];
      for (int j = 0; j < c; ++j) gx[static_cast<std::size_t>(i) * c + j] += yi[j] * (gi[j] - dot);
    }
  });
}

template <typename T>
Var<T> layer_norm_rows(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  GK_REQUIRE(x.value().rank() == 2, "layer_norm_rows expects a matrix");
  const int r = x.dim(0), c = x.dim(1);
  GK_REQUIRE(gamma.value().size() == static_cast<std::size_t>(c) &&
                 beta.value().size() == static_cast<std::size_t>(c),
             "layer_norm_rows parameter size mismatch");
  Tensor<T> y({r, c});
  std::vector<T> normed(static_cast<std::size_t>(r) * c), inv_std(r);
  for (int i = 0; i < r; ++i) {
    const T* xi = x.value().data() + static_cast<std::size_t>(i) * c;
    T mean = 0;
    for (int j = 0; j < c; ++j) mean += xi[j];
    mean /= c;
    T var = 0;
    for (int j = 0; j < c; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= c;
    inv_std[i] = T(1) / std::sqrt(var + eps);
    for (int j = 0; j < c; ++j) {
      const T nh = (xi[j] - mean) * inv_std[i];
      normed[static_cast<std::size_t>(i) * c + j] = nh;
      y.at(i, j) = nh * gamma.value()[j] + beta.value()[j];
    }
  }
  return make_result<T>(std::move(y), {x, gamma, beta},
                        [r, c, normed = std::move(normed), inv_std = std::move(inv_std)](Node<T>& self) {
                          const T* gam = self.input(1).data();
                          T* gx = self.input_grad(0);
                          T* gg = self.input_grad(1);
                          T* gbeta = self.input_grad(2);
                          std::vector<T> dn(c);
                          for (int i = 0; i < r; ++i) {
                            const T* gi = self.grad.data() + static_cast<std::size_t>(i) * c;
                            const T* ni = normed.data() + static_cast<std::size_t>(i) * c;
                            T mean_dn = 0, mean_dn_n = 0;
                            for (int j = 0; j < c; ++j) {
                              if (gg) gg[j] += gi[j] * ni[j];
                              if (gbeta) gbeta[j] += gi[j];
                              dn[j] = gi[j] * gam[j];
                              mean_dn += dn[j];
                              mean_dn_n += dn[j] * ni[j];
                            }
                            if (!gx) continue;
                            mean_dn /= c;
                            mean_dn_n /= c;
                            for (int j = 0; j < c; ++j)
                              gx[static_cast<std::size_t>(i) * c + j] +=
                                  inv_std[i] * (dn[j] - mean_dn - ni[j] * mean_dn_n);
                          }
                        });
}

template <typename T>
Var<T> scale_channels(const Var<T>& x, const Var<T>& s) {
  GK_REQUIRE(x.value().rank() == 3 && s.value().size() == static_cast<std::size_t>(x.dim(0)),
             "scale_channels: " << to_string(x.shape()) << " by " << to_string(s.shape()));
  const int c = x.dim(0);
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  Tensor<T> y = x.value();
  for (int i = 0; i < c; ++i)
    for (std::size_t j = 0; j < plane; ++j) y[i * plane + j] *= s.value()[i];
  return make_result<T>(std::move(y), {x, s}, [c, plane](Node<T>& self) {
    const T* xv = self.input(0).data();
    const T* sv = self.input(1).data();
    T* gx = self.input_grad(0);
    T* gs = self.input_grad(1);
    for (int i = 0; i < c; ++i) {
      T acc = 0;
      for (std::size_t j = 0; j < plane; ++j) {
        const T g = self.grad[i * plane + j];
        if (gx) gx[i * plane + j] += g * sv[i];
        acc += g * xv[i * plane + j];
      }
      if (gs) gs[i] += acc;
    }
  });
}

template <typename T>
Var<T> mul_spatial(const Var<T>& x, const Var<T>& g) {
  GK_REQUIRE(x.value().rank() == 3 && g.value().rank() == 3 && g.dim(0) == 1 &&
                 g.dim(1) == x.dim(1) && g.dim(2) == x.dim(2),
             "mul_spatial: " << to_string(x.shape()) << " by " << to_string(g.shape()));
  const int c = x.dim(0);
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  Tensor<T> y = x.value();
  for (int i = 0; i < c; ++i)
    for (std::size_t j = 0; j < plane; ++j) y[i * plane + j] *= g.value()[j];
  return make_result<T>(std::move(y), {x, g}, [c, plane](Node<T>& self) {
    const T* xv = self.input(0).data();
    const T* gv = self.input(1).data();
    T* gx = self.input_grad(0);
    T* gg = self.input_grad(1);
    for (int i = 0; i < c; ++i)
      for (std::size_t j = 0; j < plane; ++j) {
        const T d = self.grad[i * plane + j];
        if (gx) gx[i * plane + j] += d * gv[j];
        if (gg) gg[j] += d * xv[i * plane + j];
      }
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  GK_REQUIRE(a.value().rank() == 3 && b.value().rank() == 3 && a.dim(1) == b.dim(1) &&
                 a.dim(2) == b.dim(2),
             "concat_channels: " << to_string(a.shape()) << " and " << to_string(b.shape()));
  Tensor<T> y({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
  std::copy(a.value().values().begin(), a.value().values().end(), y.data());
  std::copy(b.value().values().begin(), b.value().values().end(), y.data() + a.value().size());
  const std::size_t na = a.value().size();
  return make_result<T>(std::move(y), {a, b}, [na](Node<T>& self) {
    if (T* ga = self.input_grad(0))
      for (std::size_t i = 0; i < na; ++i) ga[i] += self.grad[i];
    if (T* gb = self.input_grad(1))
      for (std::size_t i = 0; i < self.value.size() - na; ++i) gb[i] += self.grad[na + i];
  });
}

template <typename T>
Var<T> slice_cols(const Var<T>& x, int start, int count) {
  GK_REQUIRE(x.value().rank() == 2 && start >= 0 && count > 0 && start + count <= x.dim(1),
             "slice_cols out of range");
  const int r = x.dim(0), c = x.dim(1);
  Tensor<T> y({r, count});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < count; ++j) y.at(i, j) = x.value().at(i, start + j);
  return make_result<T>(std::move(y), {x}, [r, c, start, count](Node<T>& self) {
    if (T* gx = self.input_grad(0))
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < count; ++j)
          gx[static_cast<std::size_t>(i) * c + start + j] += self.grad.at(i, j);
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  GK_REQUIRE(!parts.empty(), "concat_cols of nothing");
  const int r = parts[0].dim(0);
  int c = 0;
  std::vector<int> offsets;
  for (const auto& p : parts) {
    GK_REQUIRE(p.value().rank() == 2 && p.dim(0) == r, "concat_cols row mismatch");
    offsets.push_back(c);
    c += p.dim(1);
  }
  Tensor<T> y({r, c});
  for (std::size_t k = 0; k < parts.size(); ++k)
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < parts[k].dim(1); ++j) y.at(i, offsets[k] + j) = parts[k].value().at(i, j);
  return make_result<T>(std::move(y), parts, [r, c, offsets](Node<T>& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      T* gk = self.input_grad(k);
      if (!gk) continue;
      const int w = self.input(k).dim(1);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < w; ++j)
          gk[static_cast<std::size_t>(i) * w + j] += self.grad[static_cast<std::size_t>(i) * c + offsets[k] + j];
    }
  });
}

template <typename T>
Var<T> slice_channels(const Var<T>& x, int start, int count) {
  GK_REQUIRE(x.value().rank() == 3 && start >= 0 && count > 0 && start + count <= x.dim(0),
             "slice_channels out of range");
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  Tensor<T> y({count, x.dim(1), x.dim(2)});
  std::copy(x.value().data() + start * plane, x.value().data() + (start + count) * plane, y.data());
  return make_result<T>(std::move(y), {x}, [start, plane](Node<T>& self) {
    if (T* gx = self.input_grad(0))
      for (std::size_t i = 0; i < self.value.size(); ++i) gx[start * plane + i] += self.grad[i];
  });
}

template <typename T>
Var<T> mean_rows(const Var<T>& x) {
  GK_REQUIRE(x.value().rank() == 2, "mean_rows expects a matrix");
  const int r = x.dim(0), c = x.dim(1);
  Tensor<T> y({c});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) y[j] += x.value().at(i, j);
  for (int j = 0; j < c; ++j) y[j] /= static_cast<T>(r);
  return make_result<T>(std::move(y), {x}, [r, c](Node<T>& self) {
    if (T* gx = self.input_grad(0))
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
          gx[static_cast<std::size_t>(i) * c + j] += self.grad[j] / static_cast<T>(r);
  });
}

#define GKNET_INSTANTIATE_OPS(T)                                                        \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                 \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                 \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                 \
  template Var<T> scale<T>(const Var<T>&, T);                                           \
  template Var<T> mul_scalar<T>(const Var<T>&, const Var<T>&);                          \
  template Var<T> sum<T>(const Var<T>&);                                                \
  template Var<T> relu<T>(const Var<T>&);                                               \
  template Var<T> gelu<T>(const Var<T>&);                                               \
  template Var<T> sigmoid<T>(const Var<T>&);                                            \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, int, int);     \
  template Var<T> conv2d_mean<T>(const Var<T>&, const Var<T>&, const Var<T>&, int, int); \
  template Var<T> upsample2x<T>(const Var<T>&);                                         \
  template Var<T> global_avg_pool<T>(const Var<T>&);                                    \
  template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);               \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&, bool, bool);                  \
  template Var<T> reshape<T>(const Var<T>&, Shape);                                     \
  template Var<T> transpose<T>(const Var<T>&);                                          \
  template Var<T> softmax_rows<T>(const Var<T>&);                                       \
  template Var<T> layer_norm_rows<T>(const Var<T>&, const Var<T>&, const Var<T>&, T);   \
  template Var<T> scale_channels<T>(const Var<T>&, const Var<T>&);                      \
  template Var<T> mul_spatial<T>(const Var<T>&, const Var<T>&);                         \
  template Var<T> concat_channels<T>(const Var<T>&, const Var<T>&);                     \
  template Var<T> slice_cols<T>(const Var<T>&, int, int);                               \
  template Var<T> concat_cols<T>(const std::vector<Var<T>>&);                           \
  template Var<T> slice_channels<T>(const Var<T>&, int, int);                           \
  template Var<T> mean_rows<T>(const Var<T>&);

GKNET_INSTANTIATE_OPS(float)
GKNET_INSTANTIATE_OPS(double)

}  // namespace gknet::ops
