#pragma once

// OpenMP-parallel numeric kernels on raw row-major buffers. Every parallel
// loop partitions disjoint outputs (channels or rows), so results are
// bit-identical for any thread count. Serial counterparts used as test
// references live in reference.hpp.

#include <vector>

namespace gknet::kernels {

struct ConvGeometry {
  int in_channels = 0;
  int height = 0;
  int width = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  int out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
  int patch() const { return in_channels * kernel * kernel; }
  bool pointwise() const { return kernel == 1 && stride == 1 && pad == 0; }
};

// c[m,n] = alpha * op(a) * op(b) + beta * c, with op(a) of shape [m,k] and
// op(b) of shape [k,n]. Stored matrices are row-major; a transposed operand is
// stored with the transposed shape.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, const T* b,
          T beta, T* c);

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols);

// Scatter-adds columns back onto dx (accumulates).
template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* dx);

// y[out_c, Ho, Wo] = w[out_c, in_c, k, k] * x + bias. bias may be null.
template <typename T>
void conv2d_forward(const T* x, const T* w, const T* bias, const ConvGeometry& g, T* y,
                    std::vector<T>& scratch);

// Accumulates gradients into dx, dw, dbias; any of them may be null.
template <typename T>
void conv2d_backward(const T* x, const T* w, const T* dy, const ConvGeometry& g, T* dx, T* dw,
                     T* dbias, std::vector<T>& scratch);

// Spatial mean of a convolution, without materialising the convolution:
// out[o] = mean_{y,x} (w * x + bias)[o, y, x].
template <typename T>
void conv2d_mean_forward(const T* x, const T* w, const T* bias, const ConvGeometry& g, T* out);

template <typename T>
void conv2d_mean_backward(const T* x, const T* w, const T* dout, const ConvGeometry& g, T* dx,
                          T* dw, T* dbias);

// Per-pixel, per-channel dynamic filtering. k is [C, n*n, H, W]; offset
// (dy,dx) = p - q is linearised row-major as (dy+r)*n + (dx+r); f is zero
// padded by r = (n-1)/2.
template <typename T>
void kernel_modulate_forward(const T* f, const T* k, int channels, int height, int width, int n,
                             T* out);

template <typename T>
void kernel_modulate_backward(const T* f, const T* k, const T* dout, int channels, int height,
                              int width, int n, T* df, T* dk);

// Bilinear x2 upsampling with half-pixel centres (align_corners = false).
template <typename T>
void upsample2x_forward(const T* x, int channels, int height, int width, T* y);

template <typename T>
void upsample2x_backward(const T* dy, int channels, int height, int width, T* dx);

}  // namespace gknet::kernels
