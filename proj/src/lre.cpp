#include "gknet/lre.hpp"

#include <cmath>

namespace gknet {

template <typename T>
LreParams<T> make_lre(ParameterStore<T>& store, const std::string& prefix, int channels,
                      int height, int width, const TransformerConfig& cfg, Rng& rng) {
  GK_CONFIG_CHECK(cfg.heads > 0 && channels % cfg.heads == 0,
                  "transformer embedding dim " << channels << " is not divisible by " << cfg.heads
                                               << " heads");
  GK_CONFIG_CHECK(cfg.layers >= 0 && cfg.ffn_expansion > 0, "invalid transformer configuration");
  LreParams<T> p;
  p.channels = channels;
  p.height = height;
  p.width = width;
  p.heads = cfg.heads;
  Tensor<T> pos({height * width, channels});
  for (auto& v : pos.values()) v = static_cast<T>(0.02 * rng.normal());
  p.positions = store.add(prefix + ".positions", std::move(pos));
  for (int i = 0; i < cfg.layers; ++i) {
    const std::string name = prefix + ".layer" + std::to_string(i);
    TransformerLayer<T> layer;
    layer.norm_attn = make_layer_norm(store, name + ".norm_attn", channels);
    layer.qkv = make_linear(store, name + ".qkv", channels, 3 * channels, rng);
    layer.proj = make_linear(store, name + ".proj", channels, channels, rng);
    layer.norm_ffn = make_layer_norm(store, name + ".norm_ffn", channels);
    layer.ffn_in = make_linear(store, name + ".ffn_in", channels, cfg.ffn_expansion * channels, rng);
    layer.ffn_out = make_linear(store, name + ".ffn_out", cfg.ffn_expansion * channels, channels, rng);
    p.layers.push_back(std::move(layer));
  }
  p.post = make_conv(store, prefix + ".post", channels, channels, 3, 1, rng);
  return p;
}

template <typename T>
Var<T> transformer_layer(const Var<T>& tokens, const TransformerLayer<T>& layer, int heads,
                         std::vector<Tensor<T>>* attention) {
  const int c = tokens.dim(1);
  const int d = c / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  Var<T> qkv = layer.qkv(layer.norm_attn(tokens));
  std::vector<Var<T>> outputs;
  outputs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Var<T> q = ops::slice_cols(qkv, h * d, d);
    Var<T> k = ops::slice_cols(qkv, c + h * d, d);
    Var<T> v = ops::slice_cols(qkv, 2 * c + h * d, d);
    Var<T> probs = ops::softmax_rows(ops::scale(ops::matmul(q, k, false, true), scale));
    if (attention) attention->push_back(probs.value());
    outputs.push_back(ops::matmul(probs, v));
  }
  Var<T> x = ops::add(tokens, layer.proj(ops::concat_cols(outputs)));
  return ops::add(x, layer.ffn_out(ops::gelu(layer.ffn_in(layer.norm_ffn(x)))));
}

template <typename T>
Var<T> extract_long_distance_reference(const Var<T>& deepest, const LreParams<T>& params,
                                       LreTrace<T>* trace) {
  GK_REQUIRE(deepest.value().rank() == 3 && deepest.dim(0) == params.channels,
             "LRE input " << to_string(deepest.shape()) << " does not have " << params.channels
                          << " channels");
  GK_REQUIRE(deepest.dim(1) == params.height && deepest.dim(2) == params.width,
             "LRE token grid " << deepest.dim(1) << "x" << deepest.dim(2)
                               << " does not match the positional table " << params.height << "x"
                               << params.width);
  const int c = params.channels, tokens = params.height * params.width;
  Var<T> x = ops::transpose(ops::reshape(deepest, {c, tokens}));
  x = ops::add(x, params.positions);
  for (std::size_t i = 0; i < params.layers.size(); ++i)
    x = transformer_layer(x, params.layers[i], params.heads,
                          (trace && i == 0) ? &trace->attention : nullptr);
  Var<T> grid = ops::reshape(ops::transpose(x), {c, params.height, params.width});
  return params.post(grid);
}

template <typename T>
Tensor<T> attention_maps(const Tensor<T>& deepest, const LreParams<T>& params, int y, int x) {
  GK_REQUIRE(y >= 0 && y < params.height && x >= 0 && x < params.width,
             "attention query point (" << y << "," << x << ") outside the " << params.height << "x"
                                       << params.width << " token grid");
  GK_REQUIRE(!params.layers.empty(), "attention_maps needs at least one transformer layer");
  GK_REQUIRE(deepest.rank() == 3 && deepest.dim(0) == params.channels &&
                 deepest.dim(1) == params.height && deepest.dim(2) == params.width,
             "attention_maps input " << to_string(deepest.shape()) << " does not match the LRE");
  NoGradGuard no_grad;
  const int c = params.channels, tokens = params.height * params.width;
  Var<T> tok = ops::transpose(ops::reshape(Var<T>::constant(deepest), {c, tokens}));
  tok = ops::add(tok, params.positions);
  std::vector<Tensor<T>> attention;
  transformer_layer(tok, params.layers[0], params.heads, &attention);
  Tensor<T> maps({params.heads, params.height, params.width});
  const int query = y * params.width + x;
  for (int h = 0; h < params.heads; ++h)
    for (int t = 0; t < tokens; ++t)
      maps[static_cast<std::size_t>(h) * tokens + t] = attention[h].at(query, t);
  return maps;
}

#define GKNET_INSTANTIATE_LRE(T)                                                                 \
  template LreParams<T> make_lre<T>(ParameterStore<T>&, const std::string&, int, int, int,       \
                                    const TransformerConfig&, Rng&);                             \
  template Var<T> transformer_layer<T>(const Var<T>&, const TransformerLayer<T>&, int,           \
                                       std::vector<Tensor<T>>*);                                 \
  template Var<T> extract_long_distance_reference<T>(const Var<T>&, const LreParams<T>&,         \
                                                     LreTrace<T>*);                              \
  template Tensor<T> attention_maps<T>(const Tensor<T>&, const LreParams<T>&, int, int);

GKNET_INSTANTIATE_LRE(float)
GKNET_INSTANTIATE_LRE(double)

}  // namespace gknet
