#include "gknet/reference.hpp"

#include <algorithm>
#include <cmath>

namespace gknet::reference {

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, const T* b,
          T beta, T* c) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      T s = 0;
      for (int t = 0; t < k; ++t) {
        const T av = trans_a ? a[static_cast<std::size_t>(t) * m + i] : a[static_cast<std::size_t>(i) * k + t];
        const T bv = trans_b ? b[static_cast<std::size_t>(j) * k + t] : b[static_cast<std::size_t>(t) * n + j];
        s += av * bv;
      }
      T& dst = c[static_cast<std::size_t>(i) * n + j];
      dst = (beta == T(0) ? T(0) : beta * dst) + alpha * s;
    }
  }
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, int stride,
                 int pad) {
  GK_REQUIRE(x.rank() == 3 && w.rank() == 4 && w.dim(1) == x.dim(0) && w.dim(2) == w.dim(3),
             "reference::conv2d shape mismatch " << to_string(x.shape()) << " * "
                                                 << to_string(w.shape()));
  const int ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int co = w.dim(0), ks = w.dim(2);
  const int ho = (h + 2 * pad - ks) / stride + 1;
  const int wo = (wd + 2 * pad - ks) / stride + 1;
  Tensor<T> y({co, ho, wo});
  for (int o = 0; o < co; ++o)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        T s = bias ? (*bias)[o] : T(0);
        for (int c = 0; c < ci; ++c)
          for (int ky = 0; ky < ks; ++ky)
            for (int kx = 0; kx < ks; ++kx) {
              const int iy = oy * stride + ky - pad;
              const int ix = ox * stride + kx - pad;
              if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
              s += w.at(o, c, ky, kx) * x.at(c, iy, ix);
            }
        y.at(o, oy, ox) = s;
      }
  return y;
}

template <typename T>
Tensor<T> kernel_modulate(const Tensor<T>& f, const Tensor<T>& k) {
  GK_REQUIRE(f.rank() == 3 && k.rank() == 4, "kernel_modulate_oracle expects F[C,H,W], K[C,N*N,H,W]");
  const int channels = f.dim(0), height = f.dim(1), width = f.dim(2);
  const int taps = k.dim(1);
  const int n = static_cast<int>(std::lround(std::sqrt(static_cast<double>(taps))));
  GK_REQUIRE(n * n == taps, "kernel tap count " << taps << " is not a square");
  GK_REQUIRE(n % 2 == 1, "kernel size " << n << " must be odd");
  GK_REQUIRE(k.dim(0) == channels && k.dim(2) == height && k.dim(3) == width,
             "kernel shape " << to_string(k.shape()) << " does not match feature "
                             << to_string(f.shape()));
  const int r = (n - 1) / 2;

  // Zero-padded copy of F.
  const int hp = height + 2 * r, wp = width + 2 * r;
  Tensor<T> padded({channels, hp, wp});
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) padded.at(c, y + r, x + r) = f.at(c, y, x);

  Tensor<T> out({channels, height, width});
  for (int c = 0; c < channels; ++c)
    for (int py = 0; py < height; ++py)
      for (int px = 0; px < width; ++px) {
        T s = 0;
        for (int qy = py - r; qy <= py + r; ++qy)
          for (int qx = px - r; qx <= px + r; ++qx) {
            const int oy = py - qy, ox = px - qx;
            const int idx = (oy + r) * n + (ox + r);
            s += k.at(c, idx, py, px) * padded.at(c, qy + r, qx + r);
          }
        out.at(c, py, px) = s;
      }
  return out;
}

template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x) {
  const int channels = x.dim(0), height = x.dim(1), width = x.dim(2);
  Tensor<T> y({channels, 2 * height, 2 * width});
  auto source = [](int o, int extent, int& i0, int& i1, double& l) {
    double s = std::max(0.0, (o + 0.5) * 0.5 - 0.5);
    i0 = static_cast<int>(std::floor(s));
    i1 = std::min(i0 + 1, extent - 1);
    l = s - i0;
  };
  for (int c = 0; c < channels; ++c)
    for (int oy = 0; oy < 2 * height; ++oy)
      for (int ox = 0; ox < 2 * width; ++ox) {
        int y0, y1, x0, x1;
        double ly, lx;
        source(oy, height, y0, y1, ly);
        source(ox, width, x0, x1, lx);
        const double v = (1 - ly) * ((1 - lx) * x.at(c, y0, x0) + lx * x.at(c, y0, x1)) +
                         ly * ((1 - lx) * x.at(c, y1, x0) + lx * x.at(c, y1, x1));
        y.at(c, oy, ox) = static_cast<T>(v);
      }
  return y;
}

#define GKNET_INSTANTIATE_REFERENCE(T)                                                          \
  template void gemm<T>(bool, bool, int, int, int, T, const T*, const T*, T, T*);              \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, int, int); \
  template Tensor<T> kernel_modulate<T>(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> upsample2x<T>(const Tensor<T>&);

GKNET_INSTANTIATE_REFERENCE(float)
GKNET_INSTANTIATE_REFERENCE(double)

}  // namespace gknet::reference
