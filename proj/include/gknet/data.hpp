#pragma once

// Triples of (composite, mask, real) images: directory indexing in the
// iHarmony4 layout, procedural synthesis of desk-scale training pairs by
// foreground colour jitter, and foreground-ratio bucketing.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gknet/random.hpp"
#include "gknet/tensor.hpp"

namespace gknet {

namespace fs = std::filesystem;

/// composite/real are [3,H,W] in [0,1]; mask is [1,H,W] with values 0 or 1.
struct ImageTriple {
  Tensor<float> composite;
  Tensor<float> mask;
  Tensor<float> real;
  std::string id;
};

enum class Bucket { B1 = 0, B2 = 1, B3 = 2 };

// B1: ratio <= 0.05, B2: 0.05 < ratio <= 0.15, B3: otherwise.
Bucket bucket_of(double ratio);
const char* bucket_name(Bucket b);
const char* bucket_range(Bucket b);

// (sum of mask) / (H*W).
double foreground_ratio(const Tensor<float>& mask);

struct SynthesisConfig {
  std::array<double, 2> gain{0.6, 1.4};
  std::array<double, 2> gamma{0.7, 1.4};
  std::array<double, 2> brightness{-0.12, 0.12};
  std::array<double, 2> saturation{0.6, 1.4};
  int min_shapes = 1;
  int max_shapes = 3;
  double min_area = 0.02;
  double max_area = 0.60;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const SynthesisConfig&) const = default;
};

/// Colour transform applied to the foreground: per-channel gain, gamma,
/// saturation scaling about the luma, then a brightness shift; clipped to [0,1].
struct Jitter {
  std::array<double, 3> gain{1.0, 1.0, 1.0};
  double gamma = 1.0;
  double saturation = 1.0;
  double brightness = 0.0;

  static Jitter identity() { return {}; }
};

Jitter sample_jitter(const SynthesisConfig& cfg, Rng& rng);
Tensor<float> apply_jitter(const Tensor<float>& rgb, const Jitter& jitter);

// Binary [1,H,W] mask from 1..3 random ellipses/convex polygons whose
// foreground ratio lies in [min_area, max_area]. Resamples degenerate draws up
// to 10 times, then throws ConfigError.
Tensor<float> sample_mask(int height, int width, const SynthesisConfig& cfg, Rng& rng);

// composite = jitter(real) * M + real * (1 - M), background copied exactly.
ImageTriple compose(const Tensor<float>& real, const Tensor<float>& mask, const Jitter& jitter,
                    std::string id);

ImageTriple synthesize_composite(const Tensor<float>& real, const SynthesisConfig& cfg, Rng& rng,
                                 std::string id = {});

// Procedural "real" photograph stand-in: smooth colour gradients with a few
// coloured objects and mild texture, quantised to 8-bit levels.
Tensor<float> synthesize_scene(int height, int width, Rng& rng);

// Rounds to the nearest 8-bit level (ties to even), clamping to [0,1].
Tensor<float> quantize8(const Tensor<float>& image);

struct DatasetEntry {
  fs::path composite, mask, real;
  std::string id;
};

struct DatasetIndex {
  enum class Source { DirectoryTriples, Synthetic };
  std::vector<DatasetEntry> entries;
  Source source = Source::DirectoryTriples;
  int skipped = 0;  // composites without both partners
};

// root/{composite_images,masks,real_images}; composite "{stem}_{maskid}_{variant}.{ext}"
// pairs with mask "{stem}_{maskid}.png" and real "{stem}.{ext}".
DatasetIndex index_dataset(const fs::path& root);

// resolution <= 0 keeps the native size. Masks are binarised at 0.5.
ImageTriple load_triple(const DatasetEntry& entry, int resolution);
std::vector<ImageTriple> load_dataset(const DatasetIndex& index, int resolution);

Tensor<float> read_image(const fs::path& path, int channels);
void write_png(const fs::path& path, const Tensor<float>& image);
// Bilinear resize of a [C,H,W] image (C = 1 or 3).
Tensor<float> resize_bilinear(const Tensor<float>& image, int height, int width);
// Nearest-neighbour upscale by an integer factor.
Tensor<float> upscale_nearest(const Tensor<float>& image, int factor);

struct ManifestEntry {
  std::string id;
  double ratio = 0;
  std::uint64_t seed = 0;
};

// Writes `count` synthetic triples as PNGs plus manifest.txt under out.
std::vector<ManifestEntry> write_synthetic_dataset(const fs::path& out, int count, int resolution,
                                                   const SynthesisConfig& cfg);
std::vector<ManifestEntry> read_manifest(const fs::path& path);

}  // namespace gknet
