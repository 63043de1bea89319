#pragma once

// Selective correlation fusion between an encoder feature F_E (C channels,
// H x W) and the previous kernel-prediction feature F_prev (C_prev channels,
// H/2 x W/2, or H x W for the deepest block which receives the long-distance
// reference):
//
//   alpha_E, alpha_P   = MLP(GAP(conv3x3(F)))             length C
//   A                  = group(alpha_P) * group(alpha_E)^T n x n, groups of m
//   abar_P, abar_E     = row-mean of conv3x3(A) split in two channels
//   S                  = sigmoid(alpha + b * FC(abar))    FC: n -> C, per branch
//   out                = S_E * proj(F_E) + up(S_P * proj(F_prev))

#include <optional>

#include "gknet/layers.hpp"

namespace gknet {

template <typename T>
struct AttentionBranch {
  Conv2d<T> conv;  // 3x3, in -> C
  Linear<T> hidden;  // C -> C, ReLU
  Linear<T> out;     // C -> C
};

template <typename T>
struct ScfParams {
  int channels = 0;
  int prev_channels = 0;
  int groups = 8;
  bool selective = true;  // false: plain sum of the two projections

  AttentionBranch<T> attend_e, attend_prev;
  Conv2d<T> relation_conv;  // 1 -> 2 channels on the n x n relation map
  Linear<T> select_e, select_prev;  // n -> C
  Var<T> b;                         // [1], starts at 0
  Conv2d<T> proj_e, proj_prev;      // 1x1: C -> C, C_prev -> C
};

template <typename T>
ScfParams<T> make_scf(ParameterStore<T>& store, const std::string& prefix, int prev_channels,
                      int channels, int groups, bool selective, Rng& rng);

/// Values of the intermediate quantities of one fusion, for inspection.
template <typename T>
struct ScfTrace {
  Tensor<T> alpha_e, alpha_prev;     // [C]
  Tensor<T> relation;                // [n,n]
  Tensor<T> abar_e, abar_prev;       // [n]
  Tensor<T> weight_e, weight_prev;   // S, [C]
};

template <typename T>
Var<T> attention_vector(const Var<T>& feature, const AttentionBranch<T>& branch);

// A = grouped_prev * grouped_e^T for [n,m] groupings.
template <typename T>
Var<T> relation(const Var<T>& grouped_prev, const Var<T>& grouped_e);

// S = sigmoid(alpha + b * fc(abar)).
template <typename T>
Var<T> selective_weights(const Var<T>& alpha, const Var<T>& abar, const Var<T>& b,
                         const Linear<T>& fc);

// Relation-map head: [n,n] -> (abar_prev, abar_e), each length n.
template <typename T>
std::pair<Var<T>, Var<T>> selective_factors(const Var<T>& relation_map, const Conv2d<T>& conv);

template <typename T>
Var<T> scf_fuse(const Var<T>& f_e, const Var<T>& f_prev, const ScfParams<T>& params,
                ScfTrace<T>* trace = nullptr);

}  // namespace gknet
