#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "../support.hpp"
#include "gknet/data.hpp"
#include "gknet/errors.hpp"

using namespace gktest;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("bucket boundaries go to the lower bucket") {
  CHECK(bucket_of(0.0) == Bucket::B1);
  CHECK(bucket_of(0.03) == Bucket::B1);
  CHECK(bucket_of(0.05) == Bucket::B1);
  CHECK(bucket_of(0.051) == Bucket::B2);
  CHECK(bucket_of(0.15) == Bucket::B2);
  CHECK(bucket_of(0.1500001) == Bucket::B3);
  CHECK(bucket_of(0.40) == Bucket::B3);
  CHECK(bucket_of(1.0) == Bucket::B3);
}

TEST_CASE("foreground ratio") {
  CHECK(foreground_ratio(Tensor<float>({1, 64, 64}, 1.0f)) == 1.0);
  Tensor<float> half({1, 64, 64});
  for (int i = 0; i < 2048; ++i) half[i * 2] = 1.0f;
  CHECK(foreground_ratio(half) == 0.5);
  Rng rng(70);
  Tensor<float> m({1, 13, 11});
  int count = 0;
  for (auto& v : m.values())
    if (rng.uniform() < 0.3) {
      v = 1.0f;
      ++count;
    }
  CHECK(foreground_ratio(m) == static_cast<double>(count) / (13 * 11));
}

TEST_CASE("identity jitter leaves the composite equal to the real image") {
  Rng rng(71);
  auto real = synthesize_scene(32, 32, rng);
  auto mask = sample_mask(32, 32, SynthesisConfig{}, rng);
  auto t = compose(real, mask, Jitter::identity(), "x");
  CHECK(t.composite == real);
}

TEST_CASE("gain 2 on red doubles red inside the mask only") {
  Tensor<float> real({3, 2, 2}, 0.3f);
  Tensor<float> mask({1, 2, 2});
  mask[0] = 1.0f;
  Jitter j;
  j.gain = {2.0, 1.0, 1.0};
  auto t = compose(real, mask, j, "g");
  CHECK(t.composite.at(0, 0, 0) == doctest::Approx(0.6f));
  CHECK(t.composite.at(1, 0, 0) == 0.3f);
  CHECK(t.composite.at(0, 1, 1) == 0.3f);
}

TEST_CASE("synthesised triples: background purity, changed pixels within the mask, exact ratio") {
  SynthesisConfig cfg;
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(mix_seed(72, s));
    auto real = synthesize_scene(48, 40, rng);
    auto t = synthesize_composite(real, cfg, rng, "t");
    REQUIRE(t.mask.shape() == Shape{1, 48, 40});
    int fg = 0, changed = 0;
    const std::size_t plane = t.mask.size();
    for (std::size_t i = 0; i < plane; ++i) {
      REQUIRE((t.mask[i] == 0.0f || t.mask[i] == 1.0f));
      fg += t.mask[i] == 1.0f;
      bool diff = false;
      for (int c = 0; c < 3; ++c) {
        const float a = t.composite[c * plane + i], b = t.real[c * plane + i];
        if (t.mask[i] == 0.0f) REQUIRE(a == b);
        diff = diff || a != b;
        REQUIRE((a >= 0.0f && a <= 1.0f));
      }
      changed += diff;
    }
    CHECK(changed <= fg);
    const double ratio = foreground_ratio(t.mask);
    CHECK(ratio == static_cast<double>(fg) / plane);
    CHECK(ratio >= cfg.min_area);
    CHECK(ratio <= cfg.max_area);
  }
}

TEST_CASE("mask generator gives up after repeated degenerate draws") {
  SynthesisConfig cfg;
  cfg.min_area = 0.9;
  cfg.max_area = 0.91;
  cfg.max_shapes = 1;
  Rng rng(73);
  // 4x4 ratios step by 1/16, so none lands in [0.90, 0.91].
  CHECK_THROWS_AS(sample_mask(4, 4, cfg, rng), ConfigError);
}

TEST_CASE("synthesis config validation") {
  SynthesisConfig c;
  c.gain = {1.2, 1.0};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.gamma = {0.0, 1.0};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.min_shapes = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("synthesis is deterministic per seed") {
  Rng a(74), b(74);
  auto ra = synthesize_scene(32, 32, a), rb = synthesize_scene(32, 32, b);
  CHECK(ra == rb);
  auto ta = synthesize_composite(ra, SynthesisConfig{}, a), tb = synthesize_composite(rb, SynthesisConfig{}, b);
  CHECK(ta.composite == tb.composite);
  CHECK(ta.mask == tb.mask);
}

TEST_CASE("quantize8 rounds to 8-bit levels, half to even") {
  Tensor<float> t({4}, std::vector<float>{-0.2f, 0.5f, 0.25f, 1.3f});
  auto q = quantize8(t);
  CHECK(q[0] == 0.0f);
  CHECK(q[1] == static_cast<float>(128.0 / 255.0));  // 127.5
  CHECK(q[2] == static_cast<float>(64.0 / 255.0));   // 63.75
  CHECK(q[3] == 1.0f);
  CHECK(quantize8(q) == q);
}

TEST_CASE("synthetic dataset: files, manifest, re-indexing, byte-identical reruns") {
  const fs::path a = fresh_dir("gknet_data_a"), b = fresh_dir("gknet_data_b");
  SynthesisConfig cfg;
  cfg.seed = 7;
  auto manifest = write_synthetic_dataset(a, 8, 32, cfg);
  write_synthetic_dataset(b, 8, 32, cfg);
  REQUIRE(manifest.size() == 8);
  for (const auto& sub : {"composite_images", "masks", "real_images"})
    for (const auto& e : fs::directory_iterator(a / sub))
      CHECK(slurp(e.path()) == slurp(b / sub / e.path().filename()));
  CHECK(slurp(a / "manifest.txt") == slurp(b / "manifest.txt"));

  auto index = index_dataset(a);
  CHECK(index.entries.size() == 8);
  CHECK(index.source == DatasetIndex::Source::Synthetic);
  auto data = load_dataset(index, 0);
  std::array<int, 3> hist{};
  auto read_back = read_manifest(a / "manifest.txt");
  REQUIRE(read_back.size() == 8);
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(data[i].id == read_back[i].id);
    CHECK(foreground_ratio(data[i].mask) == read_back[i].ratio);
    ++hist[static_cast<int>(bucket_of(foreground_ratio(data[i].mask)))];
    // PNG round trip of the 8-bit synthetic images is exact.
    const std::size_t plane = data[i].mask.size();
    for (std::size_t p = 0; p < plane; ++p)
      if (data[i].mask[p] == 0.0f)
        for (int c = 0; c < 3; ++c) REQUIRE(data[i].composite[c * plane + p] == data[i].real[c * plane + p]);
  }
  std::string line, last;
  std::ifstream is(a / "manifest.txt");
  while (std::getline(is, line)) last = line;
  CHECK(last == "# buckets B1=" + std::to_string(hist[0]) + " B2=" + std::to_string(hist[1]) +
                    " B3=" + std::to_string(hist[2]));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("directory triples follow the naming rule") {
  const fs::path root = fresh_dir("gknet_data_layout");
  for (const auto& sub : {"composite_images", "masks", "real_images"}) fs::create_directories(root / sub);
  Tensor<float> img({3, 8, 8}, 0.5f), mask({1, 8, 8});
  mask.at(0, 2, 2) = 1.0f;
  write_png(root / "composite_images" / "a_1_2.png", img);
  write_png(root / "masks" / "a_1.png", mask);
  write_png(root / "real_images" / "a.png", img);
  write_png(root / "composite_images" / "b_1_1.png", img);  // no mask
  write_png(root / "real_images" / "b.png", img);
  auto index = index_dataset(root);
  REQUIRE(index.entries.size() == 1);
  CHECK(index.entries[0].id == "a_1_2");
  CHECK(index.skipped == 1);
  CHECK(index.source == DatasetIndex::Source::DirectoryTriples);
  auto t = load_triple(index.entries[0], 16);
  CHECK(t.composite.shape() == Shape{3, 16, 16});
  for (float v : t.mask.values()) CHECK((v == 0.0f || v == 1.0f));

  fs::remove(root / "masks" / "a_1.png");
  CHECK_THROWS_AS(index_dataset(root), ConfigError);
  CHECK_THROWS_AS(index_dataset(root / "missing"), ConfigError);
  fs::remove_all(root);
}

TEST_CASE("png writer rounds half to even and clamps") {
  const fs::path p = fs::temp_directory_path() / "gknet_round.png";
  Tensor<float> img({1, 1, 4}, std::vector<float>{-0.2f, 0.5f, 3.0f / 255.0f, 1.3f});
  write_png(p, img);
  auto back = read_image(p, 1);
  CHECK(back[0] == 0.0f);
  CHECK(back[1] == static_cast<float>(128.0 / 255.0));
  CHECK(back[2] == static_cast<float>(3.0 / 255.0));
  CHECK(back[3] == 1.0f);
  fs::remove(p);
}

}
