#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "gknet/checkpoint.hpp"
#include "gknet/trainer.hpp"

using namespace gknet;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(GKNET_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p);
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("gknet_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

NetworkConfig small_network() {
  NetworkConfig c;
  c.depth = 2;
  c.base_channels = 8;
  c.resolution = 32;
  c.scf_groups = 4;
  c.modulation_levels = {1, 2};
  c.transformer.layers = 1;
  c.transformer.heads = 2;
  return c;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST_CASE("synthesize is byte-deterministic and rejects an empty count") {
  const fs::path a = scratch("syn_a"), b = scratch("syn_b");
  REQUIRE(run("synthesize --out " + q(a) + " --count 8 --seed 7 --resolution 32").code == 0);
  REQUIRE(run("synthesize --out " + q(b) + " --count 8 --seed 7 --resolution 32").code == 0);
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    CHECK(slurp(e.path()) == slurp(b / fs::relative(e.path(), a)));
  }
  CHECK(files == 25);
  CHECK(run("synthesize --out " + q(scratch("syn_c")) + " --count 0").code == 2);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("train with zero epochs writes a checkpoint; eval matches the baseline") {
  const fs::path dir = scratch("train");
  REQUIRE(run("synthesize --out " + q(dir / "data") + " --count 6 --seed 3 --resolution 32").code == 0);
  auto t = run("train --data " + q(dir / "data") +
               " --resolution 32 --depth 2 --base-channels 8 --scf-groups 4 --modulation-levels 1 2"
               " --transformer-layers 1 --transformer-heads 2 --epochs 0 --out " +
               q(dir / "ckpt") + " --log " + q(dir / "train.log"));
  INFO(t.out);
  REQUIRE(t.code == 0);
  CHECK(fs::exists(dir / "ckpt" / "latest.ckpt"));

  auto e = run("eval --checkpoint " + q(dir / "ckpt" / "latest.ckpt") + " --data " + q(dir / "data") + " --out " +
               q(dir / "eval") + " --baseline");
  INFO(e.out);
  REQUIRE(e.code == 0);
  auto model = read_metrics_csv(dir / "eval" / "metrics.csv");
  auto base = read_metrics_csv(dir / "eval" / "baseline.csv");
  CHECK(model.overall.mse == base.overall.mse);
  CHECK(model.overall.fmse == base.overall.fmse);
  CHECK(model.overall.count == 6);
  CHECK(model.buckets[0].count + model.buckets[1].count + model.buckets[2].count == 6);
  // The summary block prints the CSV means.
  const std::string summary = slurp(dir / "eval" / "metrics_summary.txt");
  char row[128];
  std::snprintf(row, sizeof row, "%.2f", model.overall.mse);
  CHECK(summary.find(row) != std::string::npos);
  std::snprintf(row, sizeof row, "%.2f", model.overall.fmse);
  CHECK(summary.find(row) != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("train log lines parse back into step and loss") {
  const fs::path dir = scratch("trainlog");
  REQUIRE(run("synthesize --out " + q(dir / "data") + " --count 4 --seed 4 --resolution 32").code == 0);
  auto t = run("train --data " + q(dir / "data") +
               " --resolution 32 --depth 2 --base-channels 8 --scf-groups 4 --modulation-levels 1 2"
               " --transformer-layers 1 --transformer-heads 2 --batch 2 --max-steps 3 --log-interval 1 --log " +
               q(dir / "train.log"));
  INFO(t.out);
  REQUIRE(t.code == 0);
  std::ifstream is(dir / "train.log");
  std::string line;
  std::vector<long long> steps;
  while (std::getline(is, line)) {
    long long step;
    double loss;
    if (parse_log_line(line, step, loss)) {
      CHECK(std::isfinite(loss));
      steps.push_back(step);
    }
  }
  CHECK(steps == std::vector<long long>{1, 2, 3});
  fs::remove_all(dir);
}

TEST_CASE("harmonize keeps background bytes and writes the clamped output under the mask") {
  const fs::path dir = scratch("harmonize");
  GKNet<float> net(small_network(), 5);
  net.perturb_parameters(9, 0.05f);
  save_checkpoint(dir / "model.ckpt", net);

  Rng rng(12);
  Tensor<float> comp = quantize8(synthesize_scene(32, 32, rng));
  write_png(dir / "comp.png", comp);
  Tensor<float> zero({1, 32, 32}), one({1, 32, 32}, 1.0f), mixed({1, 32, 32});
  for (int y = 8; y < 20; ++y)
    for (int x = 4; x < 28; ++x) mixed.at(0, y, x) = 1.0f;
  write_png(dir / "zero.png", zero);
  write_png(dir / "one.png", one);
  write_png(dir / "mixed.png", mixed);

  auto harmonize_with = [&](const std::string& mask) {
    auto r = run("harmonize --checkpoint " + q(dir / "model.ckpt") + " --composite " + q(dir / "comp.png") +
                 " --mask " + q(dir / (mask + ".png")) + " --out " + q(dir / (mask + "_out.png")));
    INFO(r.out);
    REQUIRE(r.code == 0);
    return read_image(dir / (mask + "_out.png"), 3);
  };

  CHECK(harmonize_with("zero") == comp);

  Tensor<float> raw;
  {
    NoGradGuard g;
    Tensor<float> in({4, 32, 32});
    std::copy(comp.values().begin(), comp.values().end(), in.values().begin());
    std::copy(one.values().begin(), one.values().end(), in.values().begin() + comp.size());
    raw = net.forward(in).output.value();
  }
  CHECK(harmonize_with("one") == quantize8(raw));

  auto out = harmonize_with("mixed");
  const std::size_t plane = 32 * 32;
  int differing = 0;
  for (std::size_t p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c) {
      if (mixed[p] == 0.0f) REQUIRE(out[c * plane + p] == comp[c * plane + p]);
      else differing += out[c * plane + p] != comp[c * plane + p];
    }
  CHECK(differing > 0);

  write_png(dir / "small.png", Tensor<float>({1, 16, 16}));
  CHECK(run("harmonize --checkpoint " + q(dir / "model.ckpt") + " --composite " + q(dir / "comp.png") + " --mask " +
            q(dir / "small.png") + " --out " + q(dir / "x.png"))
            .code == 1);
  CHECK(run("harmonize --checkpoint " + q(dir / "missing.ckpt") + " --composite " + q(dir / "comp.png") +
            " --mask " + q(dir / "zero.png") + " --out " + q(dir / "x.png"))
            .code == 2);
  fs::remove_all(dir);
}

TEST_CASE("inspect: cluster counts, label maps and attention dumps") {
  const fs::path dir = scratch("inspect");
  GKNet<float> identity(small_network(), 5);
  save_checkpoint(dir / "identity.ckpt", identity);
  GKNet<float> trained(small_network(), 5);
  trained.perturb_parameters(9, 0.05f);
  save_checkpoint(dir / "trained.ckpt", trained);
  Rng rng(13);
  write_png(dir / "comp.png", quantize8(synthesize_scene(32, 32, rng)));

  // Identity kernels are the same vector at every pixel: one occupied cluster.
  auto r = run("inspect --checkpoint " + q(dir / "identity.ckpt") + " --input " + q(dir / "comp.png") +
               " --kernels-k 6 --out " + q(dir / "id"));
  INFO(r.out);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("1 occupied clusters of 6") != std::string::npos);
  CHECK(fs::exists(dir / "id" / "attention_head1.png"));

  r = run("inspect --checkpoint " + q(dir / "trained.ckpt") + " --input " + q(dir / "comp.png") +
          " --kernels-k 1 --attn-point 1,2 --out " + q(dir / "k1"));
  REQUIRE(r.code == 0);
  for (int level : {1, 2}) {
    auto img = read_image(dir / "k1" / ("kernels_l" + std::to_string(level) + ".png"), 3);
    const std::size_t plane = img.size() / 3;
    for (std::size_t p = 0; p < plane; ++p)
      for (int c = 0; c < 3; ++c) REQUIRE(img[c * plane + p] == img[c * plane]);
    auto k = read_tensor_file(dir / "k1" / ("kernels_l" + std::to_string(level) + ".gkt"));
    CHECK(k.rank() == 4);
  }
  auto maps = read_tensor_file(dir / "k1" / "attention.gkt");
  REQUIRE(maps.rank() == 3);
  CHECK(maps.dim(0) == 2);
  for (int h = 0; h < 2; ++h) {
    double s = 0;
    for (int i = 0; i < maps.dim(1) * maps.dim(2); ++i) s += maps[h * maps.dim(1) * maps.dim(2) + i];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
  }

  CHECK(run("inspect --checkpoint " + q(dir / "trained.ckpt") + " --input " + q(dir / "comp.png") +
            " --kernels-k 0 --out " + q(dir / "k0"))
            .code == 2);
  fs::remove_all(dir);
}

TEST_CASE("exit codes for configuration problems") {
  CHECK(run("").code == 2);
  CHECK(run("--help").code == 0);
  CHECK(run("train").code == 2);
  CHECK(run("train --data /nonexistent/gknet").code == 2);
  CHECK(run("eval --checkpoint /nonexistent.ckpt --data /tmp").code == 2);
  const fs::path dir = scratch("badconfig");
  std::ofstream(dir / "bad.json") << "{\"network\": {\"depht\": 2}}";
  CHECK(run("synthesize --out " + q(dir / "d") + " --config " + q(dir / "bad.json")).code == 2);
  fs::remove_all(dir);
}
