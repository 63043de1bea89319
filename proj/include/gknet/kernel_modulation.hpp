#pragma once

// Per-pixel kernel modulation: every pixel p of every channel c of a decoder
// feature is replaced by a weighted sum of its n x n neighbourhood, with the
// weights K[c, :, p] predicted per pixel:
//
//   out[c,p] = sum_{q in N(p)} K[c, idx(p - q), p] * F_pad[c, q]
//
// idx linearises the offset (dy,dx) = p - q row-major, dy,dx in [-r, r],
// r = (n-1)/2, and F_pad is F zero-padded by r. No normalisation is applied
// to K; channels never mix.

#include <string>
#include <vector>

#include "gknet/autograd.hpp"

namespace gknet {

/// Predicted kernels for the modulated decoder levels (level 1 = deepest).
template <typename T>
struct KernelSet {
  std::vector<int> levels;
  std::vector<int> sizes;             // n per entry, odd
  std::vector<Tensor<T>> kernels;     // [C_l, n*n, H_l, W_l] per entry
};

// Returns n for a [C, n*n, H, W] kernel tensor matching feature [C,H,W];
// throws ContractViolation on even n or a shape mismatch.
template <typename T>
int checked_kernel_size(const Shape& feature, const Shape& kernel);

template <typename T>
Tensor<T> kernel_modulate(const Tensor<T>& f, const Tensor<T>& k);

template <typename T>
Var<T> kernel_modulate(const Var<T>& f, const Var<T>& k);

// Explicit-loop oracle with the same contract; small tensors only.
template <typename T>
Tensor<T> kernel_modulate_oracle(const Tensor<T>& f, const Tensor<T>& k);

// One-hot centre kernel: modulation with it is the identity.
template <typename T>
Tensor<T> identity_kernel(int channels, int n, int height, int width);

inline int center_tap(int n) { return (n / 2) * n + n / 2; }

}  // namespace gknet
