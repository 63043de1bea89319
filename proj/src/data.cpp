#include "gknet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <set>
#include <sstream>

namespace gknet {

Bucket bucket_of(double ratio) {
  if (ratio <= 0.05) return Bucket::B1;
  if (ratio <= 0.15) return Bucket::B2;
  return Bucket::B3;
}

const char* bucket_name(Bucket b) {
  switch (b) {
    case Bucket::B1: return "B1";
    case Bucket::B2: return "B2";
    case Bucket::B3: return "B3";
  }
  return "?";
}

const char* bucket_range(Bucket b) {
  switch (b) {
    case Bucket::B1: return "0%~5%";
    case Bucket::B2: return "5%~15%";
    case Bucket::B3: return "15%~100%";
  }
  return "?";
}

double foreground_ratio(const Tensor<float>& mask) {
  GK_REQUIRE(mask.rank() == 3 && mask.dim(0) == 1, "foreground_ratio expects a [1,H,W] mask");
  GK_REQUIRE(mask.size() > 0, "foreground_ratio of an empty mask");
  double s = 0;
  for (float v : mask.values()) s += v;
  return s / static_cast<double>(mask.size());
}

void SynthesisConfig::validate() const {
  auto range = [](const std::array<double, 2>& r, const char* name, bool positive) {
    GK_CONFIG_CHECK(r[0] <= r[1], "synthesis range " << name << " is empty");
    GK_CONFIG_CHECK(!positive || r[0] > 0, "synthesis range " << name << " must be positive");
  };
  range(gain, "gain", true);
  range(gamma, "gamma", true);
  range(brightness, "brightness", false);
  range(saturation, "saturation", false);
  GK_CONFIG_CHECK(saturation[0] >= 0, "saturation scale must be non-negative");
  GK_CONFIG_CHECK(min_shapes >= 1 && min_shapes <= max_shapes, "mask shape count range is empty");
  GK_CONFIG_CHECK(min_area > 0 && min_area <= max_area && max_area <= 1.0,
                  "mask area range must satisfy 0 < min <= max <= 1");
}

Jitter sample_jitter(const SynthesisConfig& cfg, Rng& rng) {
  Jitter j;
  for (double& g : j.gain) g = rng.uniform(cfg.gain[0], cfg.gain[1]);
  j.gamma = rng.uniform(cfg.gamma[0], cfg.gamma[1]);
  j.saturation = rng.uniform(cfg.saturation[0], cfg.saturation[1]);
  j.brightness = rng.uniform(cfg.brightness[0], cfg.brightness[1]);
  return j;
}

Tensor<float> apply_jitter(const Tensor<float>& rgb, const Jitter& jitter) {
  GK_REQUIRE(rgb.rank() == 3 && rgb.dim(0) == 3, "apply_jitter expects [3,H,W]");
  const std::size_t plane = static_cast<std::size_t>(rgb.dim(1)) * rgb.dim(2);
  Tensor<float> out(rgb.shape());
  for (std::size_t i = 0; i < plane; ++i) {
    double v[3];
    for (int c = 0; c < 3; ++c) {
      v[c] = rgb[c * plane + i];
      if (jitter.gain[c] != 1.0) v[c] *= jitter.gain[c];
      if (jitter.gamma != 1.0) v[c] = std::pow(std::max(v[c], 0.0), jitter.gamma);
    }
    if (jitter.saturation != 1.0) {
      const double luma = 0.299 * v[0] + 0.587 * v[1] + 0.114 * v[2];
      for (double& x : v) x = luma + jitter.saturation * (x - luma);
    }
    for (int c = 0; c < 3; ++c) {
      double x = v[c] + jitter.brightness;
      out[c * plane + i] = static_cast<float>(std::clamp(x, 0.0, 1.0));
    }
  }
  return out;
}

namespace {

struct Point {
  double x, y;
};

bool inside_polygon(const std::vector<Point>& poly, double x, double y) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    if ((poly[i].y > y) != (poly[j].y > y) &&
        x < (poly[j].x - poly[i].x) * (y - poly[i].y) / (poly[j].y - poly[i].y) + poly[i].x)
      in = !in;
  }
  return in;
}

// Draws one shape of roughly `area_px` pixels into mask.
void draw_shape(Tensor<float>& mask, double area_px, Rng& rng) {
  const int h = mask.dim(1), w = mask.dim(2);
  const double cx = rng.uniform(0.2, 0.8) * w;
  const double cy = rng.uniform(0.2, 0.8) * h;
  const double theta = rng.uniform(0.0, std::numbers::pi);
  if (rng.uniform() < 0.5) {
    const double aspect = rng.uniform(0.5, 2.0);
    const double a = std::sqrt(area_px / (std::numbers::pi * aspect));
    const double b = aspect * a;
    const double ct = std::cos(theta), st = std::sin(theta);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        const double u = (ct * dx + st * dy) / a;
        const double v = (-st * dx + ct * dy) / b;
        if (u * u + v * v <= 1.0) mask.at(0, y, x) = 1.0f;
      }
  } else {
    const int k = rng.uniform_int(3, 7);
    std::vector<double> angles(k), radii(k);
    for (double& t : angles) t = rng.uniform(0.0, 2 * std::numbers::pi);
    std::sort(angles.begin(), angles.end());
    for (double& r : radii) r = rng.uniform(0.7, 1.0);
    double unit_area = 0;
    for (int i = 0; i < k; ++i) {
      const int j = (i + 1) % k;
      double d = angles[j] - angles[i];
      if (j == 0) d += 2 * std::numbers::pi;
      unit_area += 0.5 * radii[i] * radii[j] * std::sin(d);
    }
    if (unit_area <= 1e-3) unit_area = 1e-3;
    const double scale = std::sqrt(area_px / unit_area);
    std::vector<Point> poly(k);
    for (int i = 0; i < k; ++i)
      poly[i] = {cx + scale * radii[i] * std::cos(angles[i]), cy + scale * radii[i] * std::sin(angles[i])};
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (inside_polygon(poly, x + 0.5, y + 0.5)) mask.at(0, y, x) = 1.0f;
  }
}

}  // namespace

Tensor<float> sample_mask(int height, int width, const SynthesisConfig& cfg, Rng& rng) {
  cfg.validate();
  const double pixels = static_cast<double>(height) * width;
  for (int attempt = 0; attempt < 10; ++attempt) {
    Tensor<float> mask({1, height, width});
    const int shapes = rng.uniform_int(cfg.min_shapes, cfg.max_shapes);
    // Log-uniform total area so small foregrounds are as common as large ones.
    const double target = std::exp(rng.uniform(std::log(cfg.min_area), std::log(cfg.max_area)));
    for (int s = 0; s < shapes; ++s) draw_shape(mask, target * pixels / shapes, rng);
    const double ratio = foreground_ratio(mask);
    if (ratio > 0 && ratio >= cfg.min_area && ratio <= cfg.max_area) return mask;
  }
  throw ConfigError("could not draw a non-degenerate mask in 10 attempts (" +
                    std::to_string(height) + "x" + std::to_string(width) + ")");
}

ImageTriple compose(const Tensor<float>& real, const Tensor<float>& mask, const Jitter& jitter,
                    std::string id) {
  GK_REQUIRE(real.rank() == 3 && real.dim(0) == 3, "compose expects a [3,H,W] real image");
  GK_REQUIRE(mask.rank() == 3 && mask.dim(0) == 1 && mask.dim(1) == real.dim(1) &&
                 mask.dim(2) == real.dim(2),
             "compose: mask " << to_string(mask.shape()) << " does not match image "
                              << to_string(real.shape()));
  for (float v : real.values()) GK_REQUIRE(v >= 0.0f && v <= 1.0f, "real image values must lie in [0,1]");
  const Tensor<float> jittered = apply_jitter(real, jitter);
  ImageTriple t;
  t.real = real;
  t.mask = mask;
  t.composite = real;
  const std::size_t plane = mask.size();
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < plane; ++i)
      if (mask[i] != 0.0f) t.composite[c * plane + i] = jittered[c * plane + i];
  t.id = std::move(id);
  return t;
}

ImageTriple synthesize_composite(const Tensor<float>& real, const SynthesisConfig& cfg, Rng& rng,
                                 std::string id) {
  GK_REQUIRE(real.rank() == 3 && real.dim(0) == 3, "synthesize_composite expects [3,H,W]");
  Tensor<float> mask = sample_mask(real.dim(1), real.dim(2), cfg, rng);
  return compose(real, mask, sample_jitter(cfg, rng), std::move(id));
}

Tensor<float> quantize8(const Tensor<float>& image) {
  Tensor<float> out(image.shape());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double v = std::clamp(static_cast<double>(image[i]), 0.0, 1.0);
    out[i] = static_cast<float>(std::nearbyint(v * 255.0) / 255.0);
  }
  return out;
}

Tensor<float> synthesize_scene(int height, int width, Rng& rng) {
  Tensor<float> img({3, height, width});
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  double c0[3], c1[3], amp[3], phase[3];
  for (int c = 0; c < 3; ++c) {
    c0[c] = rng.uniform(0.1, 0.9);
    c1[c] = rng.uniform(0.1, 0.9);
    amp[c] = rng.uniform(0.0, 0.08);
    phase[c] = rng.uniform(0.0, 2 * std::numbers::pi);
  }
  const double dir = rng.uniform(0.0, 2 * std::numbers::pi);
  const double fx = rng.uniform(1.0, 3.0), fy = rng.uniform(1.0, 3.0);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double u = (x + 0.5) / width - 0.5, v = (y + 0.5) / height - 0.5;
      const double t = std::clamp(0.5 + std::cos(dir) * u + std::sin(dir) * v, 0.0, 1.0);
      for (int c = 0; c < 3; ++c) {
        const double wave = amp[c] * std::sin(2 * std::numbers::pi * (fx * u + fy * v) + phase[c]);
        img[c * plane + static_cast<std::size_t>(y) * width + x] =
            static_cast<float>((1 - t) * c0[c] + t * c1[c] + wave);
      }
    }
  // A few shaded objects.
  const int objects = rng.uniform_int(2, 5);
  for (int o = 0; o < objects; ++o) {
    double color[3];
    for (double& c : color) c = rng.uniform(0.05, 0.95);
    const double cx = rng.uniform(0.0, 1.0) * width, cy = rng.uniform(0.0, 1.0) * height;
    const double rx = rng.uniform(0.08, 0.3) * width, ry = rng.uniform(0.08, 0.3) * height;
    const bool box = rng.uniform() < 0.4;
    const double shade = rng.uniform(0.1, 0.35);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
        const bool in = box ? (std::abs(dx) <= 1 && std::abs(dy) <= 1) : (dx * dx + dy * dy <= 1);
        if (!in) continue;
        const double light = 1.0 - shade * (0.5 + 0.5 * dy);
        for (int c = 0; c < 3; ++c)
          img[c * plane + static_cast<std::size_t>(y) * width + x] = static_cast<float>(color[c] * light);
      }
  }
  for (auto& v : img.values()) v = static_cast<float>(v + 0.015 * rng.normal());
  return quantize8(img);
}

namespace {

Tensor<float> mat_to_tensor(const cv::Mat& m) {
  const int channels = m.channels();
  Tensor<float> t({channels, m.rows, m.cols});
  const std::size_t plane = static_cast<std::size_t>(m.rows) * m.cols;
  for (int y = 0; y < m.rows; ++y) {
    const float* row = m.ptr<float>(y);
    for (int x = 0; x < m.cols; ++x)
      for (int c = 0; c < channels; ++c)
        t[c * plane + static_cast<std::size_t>(y) * m.cols + x] = row[x * channels + c];
  }
  return t;
}

cv::Mat read_float_mat(const fs::path& path, int channels) {
  cv::Mat raw = cv::imread(path.string(), channels == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR);
  GK_CONFIG_CHECK(!raw.empty(), "cannot read image " << path.string());
  if (channels == 3) cv::cvtColor(raw, raw, cv::COLOR_BGR2RGB);
  // Table lookup gives exactly float(k / 255.0), the same levels quantize8 produces.
  cv::Mat table(1, 256, CV_32FC1);
  for (int k = 0; k < 256; ++k) table.at<float>(k) = static_cast<float>(k / 255.0);
  cv::Mat f;
  cv::LUT(raw, table, f);
  return f;
}

cv::Mat resized(const cv::Mat& m, int resolution) {
  if (resolution <= 0 || (m.rows == resolution && m.cols == resolution)) return m;
  cv::Mat out;
  cv::resize(m, out, cv::Size(resolution, resolution), 0, 0, cv::INTER_LINEAR);
  return out;
}

}  // namespace

Tensor<float> read_image(const fs::path& path, int channels) {
  GK_REQUIRE(channels == 1 || channels == 3, "read_image supports 1 or 3 channels");
  return mat_to_tensor(read_float_mat(path, channels));
}

void write_png(const fs::path& path, const Tensor<float>& image) {
  GK_REQUIRE(image.rank() == 3 && (image.dim(0) == 1 || image.dim(0) == 3),
             "write_png expects [1,H,W] or [3,H,W], got " << to_string(image.shape()));
  const int channels = image.dim(0), h = image.dim(1), w = image.dim(2);
  cv::Mat m(h, w, channels == 1 ? CV_8UC1 : CV_8UC3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int y = 0; y < h; ++y) {
    auto* row = m.ptr<unsigned char>(y);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c) {
        const double v = std::clamp(static_cast<double>(image[c * plane + static_cast<std::size_t>(y) * w + x]), 0.0, 1.0);
        // OpenCV stores colour images as BGR.
        const int dst = channels == 3 ? 2 - c : c;
        row[x * channels + dst] = static_cast<unsigned char>(std::nearbyint(v * 255.0));
      }
  }
  GK_CONFIG_CHECK(cv::imwrite(path.string(), m), "cannot write image " << path.string());
}

Tensor<float> resize_bilinear(const Tensor<float>& image, int height, int width) {
  GK_REQUIRE(image.rank() == 3 && (image.dim(0) == 1 || image.dim(0) == 3),
             "resize_bilinear expects [1,H,W] or [3,H,W], got " << to_string(image.shape()));
  GK_REQUIRE(height > 0 && width > 0, "resize target must be positive");
  const int channels = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h == height && w == width) return image;
  cv::Mat m(h, w, channels == 1 ? CV_32FC1 : CV_32FC3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int y = 0; y < h; ++y) {
    float* row = m.ptr<float>(y);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c) row[x * channels + c] = image[c * plane + static_cast<std::size_t>(y) * w + x];
  }
  cv::Mat out;
  cv::resize(m, out, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
  return mat_to_tensor(out);
}

Tensor<float> upscale_nearest(const Tensor<float>& image, int factor) {
  GK_REQUIRE(image.rank() == 3 && factor >= 1, "upscale_nearest expects [C,H,W] and a positive factor");
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor<float> out({c, h * factor, w * factor});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h * factor; ++y)
      for (int x = 0; x < w * factor; ++x) out.at(ch, y, x) = image.at(ch, y / factor, x / factor);
  return out;
}

DatasetIndex index_dataset(const fs::path& root) {
  GK_CONFIG_CHECK(fs::is_directory(root), "dataset root " << root.string() << " does not exist");
  const fs::path comp_dir = root / "composite_images", mask_dir = root / "masks",
                 real_dir = root / "real_images";
  for (const auto& d : {comp_dir, mask_dir, real_dir})
    GK_CONFIG_CHECK(fs::is_directory(d), "dataset root is missing " << d.filename().string() << "/");

  std::vector<fs::path> composites;
  for (const auto& e : fs::directory_iterator(comp_dir))
    if (e.is_regular_file()) composites.push_back(e.path());
  std::sort(composites.begin(), composites.end());

  DatasetIndex index;
  index.source = fs::exists(root / "manifest.txt") ? DatasetIndex::Source::Synthetic
                                                   : DatasetIndex::Source::DirectoryTriples;
  std::set<std::string> ids;
  for (const fs::path& comp : composites) {
    const std::string stem_full = comp.stem().string();
    const std::string ext = comp.extension().string();
    const auto last = stem_full.rfind('_');
    const auto mid = last == std::string::npos || last == 0 ? std::string::npos : stem_full.rfind('_', last - 1);
    if (mid == std::string::npos || mid == 0) {
      ++index.skipped;
      continue;
    }
    const std::string stem = stem_full.substr(0, mid);
    const std::string mask_name = stem_full.substr(0, last) + ".png";
    const fs::path mask = mask_dir / mask_name;
    fs::path real;
    for (const std::string& candidate : {ext, std::string(".jpg"), std::string(".png"), std::string(".jpeg")}) {
      if (fs::exists(real_dir / (stem + candidate))) {
        real = real_dir / (stem + candidate);
        break;
      }
    }
    if (!fs::exists(mask) || real.empty()) {
      ++index.skipped;
      continue;
    }
    const std::string id = stem_full;
    GK_CONFIG_CHECK(ids.insert(id).second, "duplicate dataset id " << id);
    index.entries.push_back({comp, mask, real, id});
  }
  GK_CONFIG_CHECK(!index.entries.empty(), "dataset at " << root.string() << " has no complete triples ("
                                                        << index.skipped << " skipped)");
  return index;
}

ImageTriple load_triple(const DatasetEntry& entry, int resolution) {
  ImageTriple t;
  t.id = entry.id;
  t.composite = mat_to_tensor(resized(read_float_mat(entry.composite, 3), resolution));
  t.real = mat_to_tensor(resized(read_float_mat(entry.real, 3), resolution));
  t.mask = mat_to_tensor(resized(read_float_mat(entry.mask, 1), resolution));
  for (auto& v : t.mask.values()) v = v >= 0.5f ? 1.0f : 0.0f;
  GK_REQUIRE(t.composite.shape() == t.real.shape() && t.mask.dim(1) == t.real.dim(1) &&
                 t.mask.dim(2) == t.real.dim(2),
             "triple " << entry.id << " has inconsistent image sizes");
  return t;
}

std::vector<ImageTriple> load_dataset(const DatasetIndex& index, int resolution) {
  const int n = static_cast<int>(index.entries.size());
  std::vector<ImageTriple> out(n);
  std::vector<std::string> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    try {
      out[i] = load_triple(index.entries[i], resolution);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (const auto& e : errors) GK_CONFIG_CHECK(e.empty(), e);
  return out;
}

std::vector<ManifestEntry> write_synthetic_dataset(const fs::path& out, int count, int resolution,
                                                   const SynthesisConfig& cfg) {
  GK_CONFIG_CHECK(count > 0, "synthetic dataset count must be positive, got " << count);
  GK_CONFIG_CHECK(resolution >= 8, "synthetic resolution must be at least 8, got " << resolution);
  cfg.validate();
  std::error_code ec;
  for (const char* sub : {"composite_images", "masks", "real_images"}) {
    fs::create_directories(out / sub, ec);
    GK_CONFIG_CHECK(!ec && fs::is_directory(out / sub),
                    "cannot create " << (out / sub).string() << ": " << ec.message());
  }
  std::vector<ManifestEntry> manifest(count);
  std::vector<std::string> errors(count);
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < count; ++i) {
    try {
      char id[32];
      std::snprintf(id, sizeof id, "synth_%05d", i);
      const std::uint64_t seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(i));
      Rng rng(seed);
      Tensor<float> real = synthesize_scene(resolution, resolution, rng);
      ImageTriple t = synthesize_composite(real, cfg, rng, id);
      t.composite = quantize8(t.composite);
      write_png(out / "composite_images" / (t.id + "_1_1.png"), t.composite);
      write_png(out / "masks" / (t.id + "_1.png"), t.mask);
      write_png(out / "real_images" / (t.id + ".png"), t.real);
      manifest[i] = {t.id + "_1_1", foreground_ratio(t.mask), seed};
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (const auto& e : errors) GK_CONFIG_CHECK(e.empty(), e);

  std::ofstream os(out / "manifest.txt");
  GK_CONFIG_CHECK(os.good(), "cannot write manifest in " << out.string());
  std::array<int, 3> hist{};
  os << "# gknet synthetic dataset\n# id ratio seed\n";
  for (const auto& m : manifest) {
    char line[128];
    std::snprintf(line, sizeof line, "%s %.17g %llu\n", m.id.c_str(), m.ratio,
                  static_cast<unsigned long long>(m.seed));
    os << line;
    ++hist[static_cast<int>(bucket_of(m.ratio))];
  }
  os << "# buckets B1=" << hist[0] << " B2=" << hist[1] << " B3=" << hist[2] << "\n";
  return manifest;
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::ifstream is(path);
  GK_CONFIG_CHECK(is.good(), "cannot read manifest " << path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    ManifestEntry e;
    unsigned long long seed = 0;
    GK_CONFIG_CHECK(static_cast<bool>(ls >> e.id >> e.ratio >> seed), "malformed manifest line: " << line);
    e.seed = seed;
    out.push_back(e);
  }
  return out;
}

}  // namespace gknet
