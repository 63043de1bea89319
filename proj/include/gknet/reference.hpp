#pragma once

// Serial, loop-for-loop reference implementations. Slow and obvious on purpose:
// tests and the benchmark compare the parallel kernels against these.

#include "gknet/kernels.hpp"
#include "gknet/tensor.hpp"

namespace gknet::reference {

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, const T* b,
          T beta, T* c);

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, int stride,
                 int pad);

/// Explicit per-pixel evaluation of the dynamic filter: for every channel c
/// and pixel p, sums K[c, idx(p - q), p] * F_pad[c, q] over the n x n
/// neighbourhood of p. Intended for small tensors.
template <typename T>
Tensor<T> kernel_modulate(const Tensor<T>& f, const Tensor<T>& k);

template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x);

}  // namespace gknet::reference
