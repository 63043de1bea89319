#include "gknet/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cstring>

namespace gknet::kernels {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using MapConstMat = Eigen::Map<const RowMat<T>>;

// Source index/weight pairs for one axis of x2 bilinear upsampling.
struct AxisTap {
  int i0, i1;
  double w0, w1;
};

std::vector<AxisTap> upsample_taps(int in) {
  std::vector<AxisTap> taps(static_cast<std::size_t>(2 * in));
  for (int o = 0; o < 2 * in; ++o) {
    double src = (o + 0.5) / 2.0 - 0.5;
    if (src < 0) src = 0;
    int i0 = static_cast<int>(src);
    int i1 = std::min(i0 + 1, in - 1);
    double l = src - i0;
    taps[o] = {i0, i1, 1.0 - l, l};
  }
  return taps;
}

// Inclusive range of output coordinates o for which o*stride + tap - pad
// lands inside [0, extent).
inline void valid_range(int extent, int out_extent, int tap, int stride, int pad, int& lo,
                        int& hi) {
  lo = 0;
  while (lo < out_extent && lo * stride + tap - pad < 0) ++lo;
  hi = out_extent - 1;
  while (hi >= lo && hi * stride + tap - pad >= extent) --hi;
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, const T* b,
          T beta, T* c) {
  MapMat<T> cm(c, m, n);
  if (beta == T(0)) {
    cm.setZero();
  } else if (beta != T(1)) {
    cm *= beta;
  }
  if (m == 0 || n == 0 || k == 0) return;
  if (!trans_a && !trans_b) {
    cm.noalias() += alpha * (MapConstMat<T>(a, m, k) * MapConstMat<T>(b, k, n));
  } else if (trans_a && !trans_b) {
    cm.noalias() += alpha * (MapConstMat<T>(a, k, m).transpose() * MapConstMat<T>(b, k, n));
  } else if (!trans_a && trans_b) {
    cm.noalias() += alpha * (MapConstMat<T>(a, m, k) * MapConstMat<T>(b, n, k).transpose());
  } else {
    cm.noalias() +=
        alpha * (MapConstMat<T>(a, k, m).transpose() * MapConstMat<T>(b, n, k).transpose());
  }
}

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const int ho = g.out_height(), wo = g.out_width();
  const int rows = g.patch();
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const int c = r / (g.kernel * g.kernel);
    const int ky = (r / g.kernel) % g.kernel;
    const int kx = r % g.kernel;
    const T* xc = x + static_cast<std::size_t>(c) * g.height * g.width;
    T* dst = cols + r * plane;
    for (int oy = 0; oy < ho; ++oy) {
      const int iy = oy * g.stride + ky - g.pad;
      T* row = dst + static_cast<std::size_t>(oy) * wo;
      if (iy < 0 || iy >= g.height) {
        std::fill(row, row + wo, T(0));
        continue;
      }
      const T* src = xc + static_cast<std::size_t>(iy) * g.width;
      if (g.stride == 1) {
        const int shift = kx - g.pad;
        const int lo = std::max(0, -shift);
        const int hi = std::min(wo, g.width - shift);
        std::fill(row, row + lo, T(0));
        if (hi > lo) std::memcpy(row + lo, src + lo + shift, sizeof(T) * (hi - lo));
        std::fill(row + std::max(lo, hi), row + wo, T(0));
      } else {
        for (int ox = 0; ox < wo; ++ox) {
          const int ix = ox * g.stride + kx - g.pad;
          row[ox] = (ix >= 0 && ix < g.width) ? src[ix] : T(0);
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* dx) {
  const int ho = g.out_height(), wo = g.out_width();
  const int kk = g.kernel * g.kernel;
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
#pragma omp parallel for schedule(static)
  for (int c = 0; c < g.in_channels; ++c) {
    T* xc = dx + static_cast<std::size_t>(c) * g.height * g.width;
    for (int t = 0; t < kk; ++t) {
      const int ky = t / g.kernel, kx = t % g.kernel;
      const T* src = cols + (static_cast<std::size_t>(c) * kk + t) * plane;
      for (int oy = 0; oy < ho; ++oy) {
        const int iy = oy * g.stride + ky - g.pad;
        if (iy < 0 || iy >= g.height) continue;
        T* row = xc + static_cast<std::size_t>(iy) * g.width;
        const T* s = src + static_cast<std::size_t>(oy) * wo;
        for (int ox = 0; ox < wo; ++ox) {
          const int ix = ox * g.stride + kx - g.pad;
          if (ix >= 0 && ix < g.width) row[ix] += s[ox];
        }
      }
    }
  }
}

template <typename T>
void conv2d_forward(const T* x, const T* w, const T* bias, const ConvGeometry& g, T* y,
                    std::vector<T>& scratch) {
  const int p = g.out_height() * g.out_width();
  const T* cols = x;
  if (!g.pointwise()) {
    scratch.resize(static_cast<std::size_t>(g.patch()) * p);
    im2col(x, g, scratch.data());
    cols = scratch.data();
  }
  gemm<T>(false, false, g.out_channels, p, g.patch(), T(1), w, cols, T(0), y);
  if (bias) {
#pragma omp parallel for schedule(static)
    for (int o = 0; o < g.out_channels; ++o) {
      T* yo = y + static_cast<std::size_t>(o) * p;
      for (int i = 0; i < p; ++i) yo[i] += bias[o];
    }
  }
}

template <typename T>
void conv2d_backward(const T* x, const T* w, const T* dy, const ConvGeometry& g, T* dx, T* dw,
                     T* dbias, std::vector<T>& scratch) {
  const int p = g.out_height() * g.out_width();
  const std::size_t col_size = static_cast<std::size_t>(g.patch()) * p;
  if (dbias) {
#pragma omp parallel for schedule(static)
    for (int o = 0; o < g.out_channels; ++o) {
      const T* d = dy + static_cast<std::size_t>(o) * p;
      T s = 0;
      for (int i = 0; i < p; ++i) s += d[i];
      dbias[o] += s;
    }
  }
  if (dw) {
    const T* cols = x;
    if (!g.pointwise()) {
      scratch.resize(col_size);
      im2col(x, g, scratch.data());
      cols = scratch.data();
    }
    gemm<T>(false, true, g.out_channels, g.patch(), p, T(1), dy, cols, T(1), dw);
  }
  if (dx) {
    if (g.pointwise()) {
      gemm<T>(true, false, g.patch(), p, g.out_channels, T(1), w, dy, T(1), dx);
    } else {
      scratch.resize(col_size);
      gemm<T>(true, false, g.patch(), p, g.out_channels, T(1), w, dy, T(0), scratch.data());
      col2im_add(scratch.data(), g, dx);
    }
  }
}

namespace {

// window[c*k*k + t] = sum over the output grid of the input sample read by tap t.
template <typename T>
std::vector<T> tap_sums(const T* x, const ConvGeometry& g) {
  const int kk = g.kernel * g.kernel;
  const int ho = g.out_height(), wo = g.out_width();
  std::vector<T> sums(static_cast<std::size_t>(g.in_channels) * kk, T(0));
#pragma omp parallel for schedule(static)
  for (int c = 0; c < g.in_channels; ++c) {
    const T* xc = x + static_cast<std::size_t>(c) * g.height * g.width;
    for (int t = 0; t < kk; ++t) {
      const int ky = t / g.kernel, kx = t % g.kernel;
      int ylo, yhi, xlo, xhi;
      valid_range(g.height, ho, ky, g.stride, g.pad, ylo, yhi);
      valid_range(g.width, wo, kx, g.stride, g.pad, xlo, xhi);
      T s = 0;
      for (int oy = ylo; oy <= yhi; ++oy) {
        const T* row = xc + static_cast<std::size_t>(oy * g.stride + ky - g.pad) * g.width;
        for (int ox = xlo; ox <= xhi; ++ox) s += row[ox * g.stride + kx - g.pad];
      }
      sums[static_cast<std::size_t>(c) * kk + t] = s;
    }
  }
  return sums;
}

}  // namespace

template <typename T>
void conv2d_mean_forward(const T* x, const T* w, const T* bias, const ConvGeometry& g, T* out) {
  const std::vector<T> sums = tap_sums(x, g);
  const T inv = T(1) / static_cast<T>(g.out_height() * g.out_width());
  gemm<T>(false, false, g.out_channels, 1, g.patch(), inv, w, sums.data(), T(0), out);
  if (bias)
    for (int o = 0; o < g.out_channels; ++o) out[o] += bias[o];
}

template <typename T>
void conv2d_mean_backward(const T* x, const T* w, const T* dout, const ConvGeometry& g, T* dx,
                          T* dw, T* dbias) {
  const T inv = T(1) / static_cast<T>(g.out_height() * g.out_width());
  if (dbias)
    for (int o = 0; o < g.out_channels; ++o) dbias[o] += dout[o];
  if (dw) {
    const std::vector<T> sums = tap_sums(x, g);
    gemm<T>(false, false, g.out_channels, g.patch(), 1, inv, dout, sums.data(), T(1), dw);
  }
  if (dx) {
    std::vector<T> dsums(static_cast<std::size_t>(g.patch()));
    gemm<T>(true, false, g.patch(), 1, g.out_channels, inv, w, dout, T(0), dsums.data());
    const int kk = g.kernel * g.kernel;
    const int ho = g.out_height(), wo = g.out_width();
#pragma omp parallel for schedule(static)
    for (int c = 0; c < g.in_channels; ++c) {
      T* xc = dx + static_cast<std::size_t>(c) * g.height * g.width;
      for (int t = 0; t < kk; ++t) {
        const T d = dsums[static_cast<std::size_t>(c) * kk + t];
        const int ky = t / g.kernel, kx = t % g.kernel;
        int ylo, yhi, xlo, xhi;
        valid_range(g.height, ho, ky, g.stride, g.pad, ylo, yhi);
        valid_range(g.width, wo, kx, g.stride, g.pad, xlo, xhi);
        for (int oy = ylo; oy <= yhi; ++oy) {
          T* row = xc + static_cast<std::size_t>(oy * g.stride + ky - g.pad) * g.width;
          for (int ox = xlo; ox <= xhi; ++ox) row[ox * g.stride + kx - g.pad] += d;
        }
      }
    }
  }
}

template <typename T>
void kernel_modulate_forward(const T* f, const T* k, int channels, int height, int width, int n,
                             T* out) {
  const int r = (n - 1) / 2;
  const std::size_t plane = static_cast<std::size_t>(height) * width;
#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels; ++c) {
    const T* fc = f + c * plane;
    const T* kc = k + static_cast<std::size_t>(c) * n * n * plane;
    T* oc = out + c * plane;
    std::fill(oc, oc + plane, T(0));
    for (int dy = -r; dy <= r; ++dy) {
      for (int dx = -r; dx <= r; ++dx) {
        const T* kt = kc + static_cast<std::size_t>((dy + r) * n + (dx + r)) * plane;
        const int y0 = std::max(0, dy), y1 = std::min(height, height + dy);
        const int x0 = std::max(0, dx), x1 = std::min(width, width + dx);
        for (int y = y0; y < y1; ++y) {
          const T* krow = kt + static_cast<std::size_t>(y) * width;
          const T* frow = fc + static_cast<std::size_t>(y - dy) * width - dx;
          T* orow = oc + static_cast<std::size_t>(y) * width;
          for (int x = x0; x < x1; ++x) orow[x] += krow[x] * frow[x];
        }
      }
    }
  }
}

template <typename T>
void kernel_modulate_backward(const T* f, const T* k, const T* dout, int channels, int height,
                              int width, int n, T* df, T* dk) {
  const int r = (n - 1) / 2;
  const std::size_t plane = static_cast<std::size_t>(height) * width;
#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels; ++c) {
    const T* fc = f + c * plane;
    const T* kc = k + static_cast<std::size_t>(c) * n * n * plane;
    const T* gc = dout + c * plane;
    T* dfc = df ? df + c * plane : nullptr;
    T* dkc = dk ? dk + static_cast<std::size_t>(c) * n * n * plane : nullptr;
    for (int dy = -r; dy <= r; ++dy) {
      for (int dx = -r; dx <= r; ++dx) {
        const std::size_t tap = static_cast<std::size_t>((dy + r) * n + (dx + r)) * plane;
        const int y0 = std::max(0, dy), y1 = std::min(height, height + dy);
        const int x0 = std::max(0, dx), x1 = std::min(width, width + dx);
        for (int y = y0; y < y1; ++y) {
          const std::size_t row = static_cast<std::size_t>(y) * width;
          const std::size_t src = static_cast<std::size_t>(y - dy) * width;
          const T* g = gc + row;
          if (dkc) {
            T* dkr = dkc + tap + row;
            const T* fr = fc + src - dx;
            for (int x = x0; x < x1; ++x) dkr[x] += g[x] * fr[x];
          }
          if (dfc) {
            const T* kr = kc + tap + row;
            T* dfr = dfc + src - dx;
            for (int x = x0; x < x1; ++x) dfr[x] += kr[x] * g[x];
          }
        }
      }
    }
  }
}

template <typename T>
void upsample2x_forward(const T* x, int channels, int height, int width, T* y) {
  const auto ty = upsample_taps(height);
  const auto tx = upsample_taps(width);
  const int w2 = 2 * width, h2 = 2 * height;
#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels; ++c) {
    const T* xc = x + static_cast<std::size_t>(c) * height * width;
    T* yc = y + static_cast<std::size_t>(c) * h2 * w2;
    std::vector<T> rows(static_cast<std::size_t>(height) * w2);
    for (int i = 0; i < height; ++i) {
      const T* src = xc + static_cast<std::size_t>(i) * width;
      T* dst = rows.data() + static_cast<std::size_t>(i) * w2;
      for (int o = 0; o < w2; ++o)
        dst[o] = static_cast<T>(tx[o].w0) * src[tx[o].i0] + static_cast<T>(tx[o].w1) * src[tx[o].i1];
    }
    for (int o = 0; o < h2; ++o) {
      const T* r0 = rows.data() + static_cast<std::size_t>(ty[o].i0) * w2;
      const T* r1 = rows.data() + static_cast<std::size_t>(ty[o].i1) * w2;
      const T a = static_cast<T>(ty[o].w0), b = static_cast<T>(ty[o].w1);
      T* dst = yc + static_cast<std::size_t>(o) * w2;
      for (int j = 0; j < w2; ++j) dst[j] = a * r0[j] + b * r1[j];
    }
  }
}

template <typename T>
void upsample2x_backward(const T* dy, int channels, int height, int width, T* dx) {
  const auto ty = upsample_taps(height);
  const auto tx = upsample_taps(width);
  const int w2 = 2 * width, h2 = 2 * height;
#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels; ++c) {
    const T* gc = dy + static_cast<std::size_t>(c) * h2 * w2;
    T* xc = dx + static_cast<std::size_t>(c) * height * width;
    std::vector<T> rows(static_cast<std::size_t>(height) * w2, T(0));
    for (int o = 0; o < h2; ++o) {
      T* r0 = rows.data() + static_cast<std::size_t>(ty[o].i0) * w2;
      T* r1 = rows.data() + static_cast<std::size_t>(ty[o].i1) * w2;
      const T a = static_cast<T>(ty[o].w0), b = static_cast<T>(ty[o].w1);
      const T* src = gc + static_cast<std::size_t>(o) * w2;
      for (int j = 0; j < w2; ++j) {
        r0[j] += a * src[j];
        r1[j] += b * src[j];
      }
    }
    for (int i = 0; i < height; ++i) {
      const T* src = rows.data() + static_cast<std::size_t>(i) * w2;
      T* dst = xc + static_cast<std::size_t>(i) * width;
      for (int o = 0; o < w2; ++o) {
        dst[tx[o].i0] += static_cast<T>(tx[o].w0) * src[o];
        dst[tx[o].i1] += static_cast<T>(tx[o].w1) * src[o];
      }
    }
  }
}

#define GKNET_INSTANTIATE_KERNELS(T)                                                           \
  template void gemm<T>(bool, bool, int, int, int, T, const T*, const T*, T, T*);             \
  template void im2col<T>(const T*, const ConvGeometry&, T*);                                   \
  template void col2im_add<T>(const T*, const ConvGeometry&, T*);                               \
  template void conv2d_forward<T>(const T*, const T*, const T*, const ConvGeometry&, T*,        \
                                  std::vector<T>&);                                             \
  template void conv2d_backward<T>(const T*, const T*, const T*, const ConvGeometry&, T*, T*,   \
                                   T*, std::vector<T>&);                                        \
  template void conv2d_mean_forward<T>(const T*, const T*, const T*, const ConvGeometry&, T*);  \
  template void conv2d_mean_backward<T>(const T*, const T*, const T*, const ConvGeometry&, T*,  \
                                        T*, T*);                                                \
  template void kernel_modulate_forward<T>(const T*, const T*, int, int, int, int, T*);         \
  template void kernel_modulate_backward<T>(const T*, const T*, const T*, int, int, int, int,   \
                                            T*, T*);                                            \
  template void upsample2x_forward<T>(const T*, int, int, int, T*);                             \
  template void upsample2x_backward<T>(const T*, int, int, int, T*);

GKNET_INSTANTIATE_KERNELS(float)
GKNET_INSTANTIATE_KERNELS(double)

}  // namespace gknet::kernels
