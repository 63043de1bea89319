#pragma once

// Differentiable operations. Shapes: images [C,H,W], token matrices [R,C],
// vectors [C], scalars [1].

#include <vector>

#include "gknet/autograd.hpp"

namespace gknet::ops {

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T s);
// x * s where s is a learnable [1] scalar.
template <typename T> Var<T> mul_scalar(const Var<T>& x, const Var<T>& s);
template <typename T> Var<T> sum(const Var<T>& x);

template <typename T> Var<T> relu(const Var<T>& x);
template <typename T> Var<T> gelu(const Var<T>& x);
template <typename T> Var<T> sigmoid(const Var<T>& x);

// bias may be an undefined Var.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, int stride, int pad);
// Spatial mean of conv2d(x, w, bias): returns [out_channels].
template <typename T>
Var<T> conv2d_mean(const Var<T>& x, const Var<T>& w, const Var<T>& bias, int stride, int pad);

template <typename T> Var<T> upsample2x(const Var<T>& x);
template <typename T> Var<T> global_avg_pool(const Var<T>& x);

// x [R,in] or [in]; w [out,in]; b [out] (may be undefined).
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b);
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool trans_a = false, bool trans_b = false);
template <typename T> Var<T> reshape(const Var<T>& x, Shape shape);
template <typename T> Var<T> transpose(const Var<T>& x);
template <typename T> Var<T> softmax_rows(const Var<T>& x);
template <typename T>
Var<T> layer_norm_rows(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));

// x [C,H,W] scaled per channel by s [C].
template <typename T> Var<T> scale_channels(const Var<T>& x, const Var<T>& s);
// x [C,H,W] scaled per pixel by g [1,H,W].
template <typename T> Var<T> mul_spatial(const Var<T>& x, const Var<T>& g);
template <typename T> Var<T> concat_channels(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> slice_cols(const Var<T>& x, int start, int count);
template <typename T> Var<T> concat_cols(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_channels(const Var<T>& x, int start, int count);
// Mean over the row index: [R,C] -> [C].
template <typename T> Var<T> mean_rows(const Var<T>& x);

}  // namespace gknet::ops
