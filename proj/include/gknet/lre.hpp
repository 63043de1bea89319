#pragma once

// Long-distance reference extractor: every pixel of the deepest encoder
// feature is a token; learned positional embeddings, pre-norm transformer
// layers, then reshape back to [C,H,W] and a 3x3 post-convolution.

#include <vector>

#include "gknet/layers.hpp"

namespace gknet {

struct TransformerConfig {
  int layers = 4;
  int heads = 4;
  int ffn_expansion = 2;

  bool operator==(const TransformerConfig&) const = default;
};

template <typename T>
struct TransformerLayer {
  LayerNorm<T> norm_attn, norm_ffn;
  Linear<T> qkv;   // C -> 3C
  Linear<T> proj;  // C -> C
  Linear<T> ffn_in, ffn_out;
};

template <typename T>
struct LreParams {
  int channels = 0;
  int height = 0;
  int width = 0;
  int heads = 1;
  Var<T> positions;  // [H*W, C]
  std::vector<TransformerLayer<T>> layers;
  Conv2d<T> post;
};

template <typename T>
LreParams<T> make_lre(ParameterStore<T>& store, const std::string& prefix, int channels,
                      int height, int width, const TransformerConfig& cfg, Rng& rng);

template <typename T>
struct LreTrace {
  // First-layer attention probabilities, one [tokens, tokens] matrix per head.
  std::vector<Tensor<T>> attention;
};

// Tokens [T,C] through one pre-norm layer. When `attention` is non-null the
// per-head softmax matrices are appended to it.
template <typename T>
Var<T> transformer_layer(const Var<T>& tokens, const TransformerLayer<T>& layer, int heads,
                         std::vector<Tensor<T>>* attention = nullptr);

template <typename T>
Var<T> extract_long_distance_reference(const Var<T>& deepest, const LreParams<T>& params,
                                       LreTrace<T>* trace = nullptr);

/// First-layer attention from the token at (y, x) to every token, per head:
/// [heads, H, W], each map summing to one.
template <typename T>
Tensor<T> attention_maps(const Tensor<T>& deepest, const LreParams<T>& params, int y, int x);

}  // namespace gknet
