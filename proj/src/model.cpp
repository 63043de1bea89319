#include "gknet/model.hpp"

#include <algorithm>
#include <set>

namespace gknet {

bool NetworkConfig::modulated(int level) const {
  return std::find(modulation_levels.begin(), modulation_levels.end(), level) !=
         modulation_levels.end();
}

int NetworkConfig::prediction_depth() const {
  int d = 0;
  for (int l : modulation_levels) d = std::max(d, l);
  return d;
}

void NetworkConfig::validate() const {
  GK_CONFIG_CHECK(depth >= 2, "network depth must be at least 2, got " << depth);
  GK_CONFIG_CHECK(base_channels > 0, "base_channels must be positive");
  GK_CONFIG_CHECK(resolution > 0 && resolution % (1 << (depth - 1)) == 0,
                  "resolution " << resolution << " is not divisible by 2^" << depth - 1);
  GK_CONFIG_CHECK(kernel_sizes.empty() || static_cast<int>(kernel_sizes.size()) == depth,
                  "kernel_sizes needs one entry per level (" << depth << ")");
  for (int n : kernel_sizes) GK_CONFIG_CHECK(n > 0 && n % 2 == 1, "kernel size " << n << " must be odd");
  std::set<int> seen;
  for (int l : modulation_levels) {
    GK_CONFIG_CHECK(l >= 1 && l <= depth, "modulation level " << l << " outside 1.." << depth);
    GK_CONFIG_CHECK(seen.insert(l).second, "modulation level " << l << " listed twice");
  }
  GK_CONFIG_CHECK(scf_groups > 0, "scf_groups must be positive");
  for (int l = 1; l <= prediction_depth(); ++l)
    GK_CONFIG_CHECK(channels(l) % scf_groups == 0, "scf_groups " << scf_groups
                                                                 << " does not divide C_" << l
                                                                 << " = " << channels(l));
  if (prediction_depth() > 0) {
    GK_CONFIG_CHECK(transformer.heads > 0 && channels(1) % transformer.heads == 0,
                    "transformer heads " << transformer.heads << " do not divide C_1 = " << channels(1));
    GK_CONFIG_CHECK(transformer.layers >= 1, "transformer needs at least one layer");
    GK_CONFIG_CHECK(transformer.ffn_expansion >= 1, "ffn_expansion must be positive");
  }
}

NetworkConfig NetworkConfig::desk() { return NetworkConfig{}; }

NetworkConfig NetworkConfig::full_scale() {
  NetworkConfig c;
  c.depth = 6;
  c.base_channels = 16;
  c.resolution = 256;
  return c;
}

template <typename T>
GKNet<T>::GKNet(const NetworkConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const int depth = config_.depth;

  encoder_.resize(depth);
  for (int l = depth; l >= 1; --l) {
    const std::string name = "encoder.l" + std::to_string(l);
    const int in = l == depth ? 4 : config_.channels(l + 1);
    const int stride = l == depth ? 1 : 2;
    encoder_[l - 1].down = make_conv(store_, name + ".down", in, config_.channels(l), 3, stride, rng);
    encoder_[l - 1].refine =
        make_conv(store_, name + ".refine", config_.channels(l), config_.channels(l), 3, 1, rng);
  }

  const int chain = config_.prediction_depth();
  if (chain > 0) {
    lre_ = make_lre(store_, "lre", config_.channels(1), config_.size(1), config_.size(1),
                    config_.transformer, rng);
    kpb_.resize(chain);
    for (int l = 1; l <= chain; ++l) {
      const std::string name = "kpb.l" + std::to_string(l);
      const int c = config_.channels(l);
      const int prev = l == 1 ? c : config_.channels(l - 1);
      KpbLevel& level = kpb_[l - 1];
      level.scf = make_scf(store_, name + ".scf", prev, c, config_.scf_groups,
                           config_.selective_fusion, rng);
      level.residual = make_conv(store_, name + ".residual", c, c, 3, 1, rng);
      if (config_.modulated(l)) {
        // Zero weights and a one-hot centre bias: kernels start as the identity.
        const int n = config_.kernel_size(l);
        Conv2d<T> head;
        head.weight = store_.add(name + ".head.weight", Tensor<T>({c * n * n, c, 1, 1}));
        Tensor<T> bias({c * n * n});
        for (int ch = 0; ch < c; ++ch) bias[static_cast<std::size_t>(ch) * n * n + center_tap(n)] = T(1);
        head.bias = store_.add(name + ".head.bias", std::move(bias));
        head.stride = 1;
        head.pad = 0;
        level.head = head;
      }
    }
  }

  bottleneck_ = make_conv(store_, "decoder.l1.bottleneck", config_.channels(1), config_.channels(1), 3, 1, rng);
  decoder_.resize(depth);
  for (int l = 2; l <= depth; ++l) {
    const std::string name = "decoder.l" + std::to_string(l);
    const int c = config_.channels(l);
    decoder_[l - 1].up = make_conv(store_, name + ".up", config_.channels(l - 1), c, 3, 1, rng);
    if (config_.skip_attention)
      decoder_[l - 1].gate = make_conv(store_, name + ".gate", c + 1, 1, 3, 1, rng);
    decoder_[l - 1].fuse = make_conv(store_, name + ".fuse", c, c, 3, 1, rng);
  }
  // Zero residual head: the initial prediction is the composite itself.
  out_.weight = store_.add("decoder.out.weight", Tensor<T>({3, config_.channels(depth), 3, 3}));
  out_.bias = store_.add("decoder.out.bias", Tensor<T>({3}));
  out_.stride = 1;
  out_.pad = 1;
}

template <typename T>
EncoderFeatures<T> GKNet<T>::encode(const Var<T>& input) const {
  GK_REQUIRE(input.value().rank() == 3 && input.dim(0) == 4,
             "encoder input must be [4,H,W] (RGB + mask), got " << to_string(input.shape()));
  const int factor = 1 << (config_.depth - 1);
  GK_REQUIRE(input.dim(1) % factor == 0 && input.dim(2) % factor == 0,
             "input " << input.dim(1) << "x" << input.dim(2) << " is not divisible by " << factor);
  EncoderFeatures<T> features;
  features.levels.resize(config_.depth);
  Var<T> x = input;
  for (int l = config_.depth; l >= 1; --l) {
    const EncoderLevel& level = encoder_[l - 1];
    x = ops::gelu(level.refine(ops::gelu(level.down(x))));
    features.levels[l - 1] = x;
  }
  return features;
}

template <typename T>
Var<T> GKNet<T>::long_distance_reference(const Var<T>& deepest, LreTrace<T>* trace) const {
  GK_REQUIRE(config_.prediction_depth() > 0, "network has no kernel-prediction branch");
  return extract_long_distance_reference(deepest, lre_, trace);
}

template <typename T>
KpbOutput<T> GKNet<T>::kpb_forward(int level, const Var<T>& f_e, const Var<T>& f_prev,
                                   ScfTrace<T>* trace) const {
  GK_REQUIRE(level >= 1 && level <= static_cast<int>(kpb_.size()),
             "no kernel-prediction block at level " << level);
  const KpbLevel& block = kpb_[level - 1];
  Var<T> fused = scf_fuse(f_e, f_prev, block.scf, trace);
  KpbOutput<T> out;
  out.feature = ops::add(fused, block.residual(ops::gelu(fused)));
  if (block.head) {
    const int c = f_e.dim(0), h = f_e.dim(1), w = f_e.dim(2);
    const int n = config_.kernel_size(level);
    out.kernels = ops::reshape((*block.head)(out.feature), {c, n * n, h, w});
  }
  return out;
}

namespace {

// Area-downsampled mask for level sizes.
template <typename T>
Tensor<T> downsample_mask(const Tensor<T>& mask, int factor) {
  const int h = mask.dim(1) / factor, w = mask.dim(2) / factor;
  Tensor<T> out({1, h, w});
  const T inv = T(1) / static_cast<T>(factor * factor);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      T s = 0;
      for (int dy = 0; dy < factor; ++dy)
        for (int dx = 0; dx < factor; ++dx) s += mask.at(0, y * factor + dy, x * factor + dx);
      out.at(0, y, x) = s * inv;
    }
  return out;
}

}  // namespace

template <typename T>
ForwardResult<T> GKNet<T>::forward(const Tensor<T>& input, const ForwardOptions& options) const {
  GK_REQUIRE(input.rank() == 3 && input.dim(0) == 4,
             "forward expects a [4,H,W] input, got " << to_string(input.shape()));
  const Var<T> in = Var<T>::constant(input);
  const EncoderFeatures<T> enc = encode(in);
  const int depth = config_.depth;

  ForwardResult<T> result;
  std::vector<Var<T>> kernels(depth);
  const int chain = config_.prediction_depth();
  if (chain > 0 && options.modulation) {
    Var<T> prev = long_distance_reference(enc.at(1), options.trace ? &result.diagnostics.lre : nullptr);
    if (options.trace) result.diagnostics.scf.resize(chain);
    for (int l = 1; l <= chain; ++l) {
      KpbOutput<T> k = kpb_forward(l, enc.at(l), prev, options.trace ? &result.diagnostics.scf[l - 1] : nullptr);
      if (k.kernels.defined()) {
        kernels[l - 1] = k.kernels;
        result.kernel_vars.push_back(k.kernels);
        result.kernels.levels.push_back(l);
        result.kernels.sizes.push_back(config_.kernel_size(l));
        result.kernels.kernels.push_back(k.kernels.value());
      }
      prev = k.feature;
    }
  }

  Tensor<T> mask({1, input.dim(1), input.dim(2)});
  std::copy(input.data() + 3 * mask.size(), input.data() + 4 * mask.size(), mask.data());

  Var<T> x = ops::gelu(bottleneck_(enc.at(1)));
  if (kernels[0].defined()) x = kernel_modulate(x, kernels[0]);
  for (int l = 2; l <= depth; ++l) {
    const DecoderLevel& level = decoder_[l - 1];
    x = ops::gelu(ops::upsample2x(level.up(x)));
    if (kernels[l - 1].defined()) x = kernel_modulate(x, kernels[l - 1]);
    Var<T> skip = enc.at(l);
    if (config_.skip_attention) {
      Var<T> m = Var<T>::constant(downsample_mask(mask, 1 << (depth - l)));
      skip = ops::mul_spatial(skip, ops::sigmoid(level.gate(ops::concat_channels(skip, m))));
    }
    x = ops::gelu(level.fuse(ops::add(x, skip)));
  }
  result.output = ops::add(ops::slice_channels(in, 0, 3), out_(x));
  return result;
}

template <typename T>
void GKNet<T>::perturb_parameters(std::uint64_t seed, T scale) {
  Rng rng(seed);
  for (const auto& [name, var] : store_.all()) {
    Var<T> v = var;
    for (auto& p : v.mutable_value().values()) p += static_cast<T>(rng.uniform(-1.0, 1.0)) * scale;
  }
}

template <typename T>
Tensor<T> blend(const Tensor<T>& output, const Tensor<T>& composite, const Tensor<T>& mask) {
  GK_REQUIRE(output.shape() == composite.shape() && output.rank() == 3 && mask.rank() == 3 &&
                 mask.dim(0) == 1 && mask.dim(1) == output.dim(1) && mask.dim(2) == output.dim(2),
             "blend: output " << to_string(output.shape()) << ", composite "
                              << to_string(composite.shape()) << ", mask " << to_string(mask.shape()));
  Tensor<T> out(output.shape());
  const std::size_t plane = mask.size();
  for (int c = 0; c < output.dim(0); ++c)
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t j = c * plane + i;
      const T m = mask[i];
      out[j] = m == T(0) ? composite[j] : output[j] * m + (T(1) - m) * composite[j];
    }
  return out;
}

template <typename T>
Var<T> blend(const Var<T>& output, const Tensor<T>& composite, const Tensor<T>& mask) {
  Tensor<T> value = blend(output.value(), composite, mask);
  return make_result<T>(std::move(value), {output}, [mask](Node<T>& self) {
    T* g = self.input_grad(0);
    if (!g) return;
    const std::size_t plane = mask.size();
    for (std::size_t j = 0; j < self.value.size(); ++j) g[j] += self.grad[j] * mask[j % plane];
  });
}

template <typename T>
Tensor<T> make_input(const Tensor<T>& composite, const Tensor<T>& mask) {
  GK_REQUIRE(composite.rank() == 3 && composite.dim(0) == 3 && mask.rank() == 3 &&
                 mask.dim(0) == 1 && mask.dim(1) == composite.dim(1) && mask.dim(2) == composite.dim(2),
             "make_input: composite " << to_string(composite.shape()) << ", mask "
                                      << to_string(mask.shape()));
  Tensor<T> input({4, composite.dim(1), composite.dim(2)});
  std::copy(composite.values().begin(), composite.values().end(), input.data());
  std::copy(mask.values().begin(), mask.values().end(), input.data() + composite.size());
  return input;
}

template class GKNet<float>;
template class GKNet<double>;

#define GKNET_INSTANTIATE_BLEND(T)                                                        \
  template Tensor<T> blend<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);      \
  template Var<T> blend<T>(const Var<T>&, const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> make_input<T>(const Tensor<T>&, const Tensor<T>&);

GKNET_INSTANTIATE_BLEND(float)
GKNET_INSTANTIATE_BLEND(double)

}  // namespace gknet
