#pragma once

// Global-aware kernel network: U-Net encoder/decoder over [RGB, mask] whose
// decoder features are filtered by per-pixel kernels. The kernels come from
// a chain of kernel-prediction blocks (deep to shallow) seeded by a
// transformer over the deepest encoder feature.
//
// Level indexing: level 1 is the deepest (lowest resolution), level `depth`
// is full resolution. Level l has base_channels * 2^(depth-l) channels.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "gknet/kernel_modulation.hpp"
#include "gknet/lre.hpp"
#include "gknet/scf.hpp"

namespace gknet {

struct NetworkConfig {
  int depth = 3;
  int base_channels = 16;
  int resolution = 64;
  // Kernel size per level 1..depth; empty means 3 everywhere.
  std::vector<int> kernel_sizes;
  std::vector<int> modulation_levels = {1, 2, 3};
  int scf_groups = 8;
  TransformerConfig transformer;
  bool skip_attention = true;
  bool selective_fusion = true;

  int channels(int level) const { return base_channels << (depth - level); }
  int size(int level) const { return resolution >> (depth - level); }
  int kernel_size(int level) const {
    return kernel_sizes.empty() ? 3 : kernel_sizes.at(static_cast<std::size_t>(level - 1));
  }
  bool modulated(int level) const;
  // Deepest-to-shallowest extent of the kernel-prediction chain.
  int prediction_depth() const;

  // Throws ConfigError on inconsistent settings.
  void validate() const;

  static NetworkConfig desk();
  static NetworkConfig full_scale();

  bool operator==(const NetworkConfig&) const = default;
};

template <typename T>
struct EncoderFeatures {
  std::vector<Var<T>> levels;  // levels[0] is level 1 (deepest)
  const Var<T>& at(int level) const { return levels.at(static_cast<std::size_t>(level - 1)); }
};

template <typename T>
struct KpbOutput {
  Var<T> kernels;  // [C_l, n*n, H_l, W_l]; undefined when the level is not modulated
  Var<T> feature;  // F_KPB^l
};

struct ForwardOptions {
  bool modulation = true;
  bool trace = false;  // record LRE attention and SCF quantities
};

template <typename T>
struct Diagnostics {
  LreTrace<T> lre;
  std::vector<ScfTrace<T>> scf;  // per prediction level, deepest first
};

template <typename T>
struct ForwardResult {
  Var<T> output;  // raw [3,H,W] prediction (composite + learned residual)
  std::vector<Var<T>> kernel_vars;
  KernelSet<T> kernels;
  Diagnostics<T> diagnostics;
};

template <typename T>
class GKNet {
 public:
  explicit GKNet(const NetworkConfig& config, std::uint64_t seed = 0);
  GKNet(GKNet&&) noexcept = default;
  GKNet& operator=(GKNet&&) noexcept = default;
  GKNet(const GKNet&) = delete;
  GKNet& operator=(const GKNet&) = delete;

  const NetworkConfig& config() const { return config_; }
  ParameterStore<T>& parameters() { return store_; }
  const ParameterStore<T>& parameters() const { return store_; }
  const LreParams<T>& lre() const { return lre_; }

  EncoderFeatures<T> encode(const Var<T>& input) const;
  Var<T> long_distance_reference(const Var<T>& deepest, LreTrace<T>* trace = nullptr) const;
  KpbOutput<T> kpb_forward(int level, const Var<T>& f_e, const Var<T>& f_prev,
                           ScfTrace<T>* trace = nullptr) const;
  // input: [4,H,W] = composite RGB + mask.
  ForwardResult<T> forward(const Tensor<T>& input, const ForwardOptions& options = {}) const;

  // Adds U(-scale, scale) noise to every parameter (tests and diagnostics).
  void perturb_parameters(std::uint64_t seed, T scale);

 private:
  struct EncoderLevel {
    Conv2d<T> down, refine;
  };
  struct KpbLevel {
    ScfParams<T> scf;
    Conv2d<T> residual;
    std::optional<Conv2d<T>> head;
  };
  struct DecoderLevel {
    Conv2d<T> up, gate, fuse;
  };

  NetworkConfig config_;
  ParameterStore<T> store_;
  std::vector<EncoderLevel> encoder_;   // index l-1
  LreParams<T> lre_;
  std::vector<KpbLevel> kpb_;           // index l-1, l <= prediction_depth
  Conv2d<T> bottleneck_;
  std::vector<DecoderLevel> decoder_;   // index l-1, l >= 2 (entry 0 unused)
  Conv2d<T> out_;
};

// out * M + (1 - M) * composite, with background pixels copied from the composite.
template <typename T>
Tensor<T> blend(const Tensor<T>& output, const Tensor<T>& composite, const Tensor<T>& mask);
template <typename T>
Var<T> blend(const Var<T>& output, const Tensor<T>& composite, const Tensor<T>& mask);

// [4,H,W] network input from a composite and its mask.
template <typename T>
Tensor<T> make_input(const Tensor<T>& composite, const Tensor<T>& mask);

}  // namespace gknet
