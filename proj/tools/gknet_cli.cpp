// gknet: synthesize | train | eval | harmonize | inspect
//
// Exit codes: 0 success, 1 contract violation (bad input data or internal
// precondition), 2 configuration error (flags, files, checkpoints).

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>

#include "gknet/checkpoint.hpp"
#include "gknet/config.hpp"
#include "gknet/kmeans.hpp"
#include "gknet/trainer.hpp"

using namespace gknet;
namespace fs = std::filesystem;

namespace {

// Flags that override config-file values only when given on the command line.
class Overrides {
 public:
  template <typename V>
  CLI::Option* add(CLI::App* app, const std::string& name, std::function<void(ConfigFile&, const V&)> set,
                   const std::string& help) {
    auto value = std::make_shared<V>();
    CLI::Option* opt = app->add_option(name, *value, help);
    apply_.push_back([opt, value, set](ConfigFile& c) {
      if (opt->count()) set(c, *value);
    });
    return opt;
  }
  void apply(ConfigFile& c) const {
    for (const auto& f : apply_) f(c);
    c.train.network = c.network;
  }

 private:
  std::vector<std::function<void(ConfigFile&)>> apply_;
};

ConfigFile resolve(const std::string& path, const Overrides& o) {
  ConfigFile c;
  if (!path.empty()) c = load_config_file(path);
  o.apply(c);
  c.network.validate();
  c.synthesis.validate();
  c.train.validate();
  return c;
}

void add_network_flags(CLI::App* app, Overrides& o) {
  o.add<int>(app, "--resolution", [](ConfigFile& c, const int& v) { c.network.resolution = v; }, "Working resolution");
  o.add<int>(app, "--depth", [](ConfigFile& c, const int& v) { c.network.depth = v; }, "Encoder/decoder levels");
  o.add<int>(app, "--base-channels", [](ConfigFile& c, const int& v) { c.network.base_channels = v; },
             "Channels at full resolution");
  o.add<std::vector<int>>(app, "--modulation-levels",
                          [](ConfigFile& c, const std::vector<int>& v) { c.network.modulation_levels = v; },
                          "Decoder levels with kernel modulation (1 = deepest)");
  o.add<std::vector<int>>(app, "--kernel-sizes",
                          [](ConfigFile& c, const std::vector<int>& v) { c.network.kernel_sizes = v; },
                          "Kernel size per level, deepest first");
  o.add<int>(app, "--scf-groups", [](ConfigFile& c, const int& v) { c.network.scf_groups = v; },
             "Channel groups in correlation fusion");
  o.add<int>(app, "--transformer-layers", [](ConfigFile& c, const int& v) { c.network.transformer.layers = v; },
             "Transformer layers");
  o.add<int>(app, "--transformer-heads", [](ConfigFile& c, const int& v) { c.network.transformer.heads = v; },
             "Attention heads");
  o.add<bool>(app, "--skip-attention", [](ConfigFile& c, const bool& v) { c.network.skip_attention = v; },
              "Mask-gated skip connections (true/false)");
  o.add<bool>(app, "--selective-fusion", [](ConfigFile& c, const bool& v) { c.network.selective_fusion = v; },
              "Selective weights in correlation fusion (true/false)");
}

void add_train_flags(CLI::App* app, Overrides& o) {
  o.add<double>(app, "--lr", [](ConfigFile& c, const double& v) { c.train.lr = v; }, "Adam learning rate");
  o.add<double>(app, "--beta1", [](ConfigFile& c, const double& v) { c.train.beta1 = v; }, "Adam beta1");
  o.add<double>(app, "--beta2", [](ConfigFile& c, const double& v) { c.train.beta2 = v; }, "Adam beta2");
  o.add<double>(app, "--eps", [](ConfigFile& c, const double& v) { c.train.eps = v; }, "Adam epsilon");
  o.add<int>(app, "--epochs", [](ConfigFile& c, const int& v) { c.train.epochs = v; }, "Training epochs");
  o.add<int>(app, "--batch", [](ConfigFile& c, const int& v) { c.train.batch_size = v; }, "Batch size");
  o.add<long long>(app, "--max-steps", [](ConfigFile& c, const long long& v) { c.train.max_steps = v; },
                   "Cap on updates (0: none)");
  o.add<std::uint64_t>(app, "--seed", [](ConfigFile& c, const std::uint64_t& v) { c.train.seed = v; },
                       "Initialisation and data-order seed");
  o.add<long long>(app, "--eval-interval", [](ConfigFile& c, const long long& v) { c.train.eval_interval = v; },
                   "Steps between evaluations");
  o.add<long long>(app, "--checkpoint-interval",
                   [](ConfigFile& c, const long long& v) { c.train.checkpoint_interval = v; },
                   "Steps between checkpoints");
  o.add<long long>(app, "--log-interval", [](ConfigFile& c, const long long& v) { c.train.log_interval = v; },
                   "Steps between log lines");
  o.add<std::string>(app, "--out", [](ConfigFile& c, const std::string& v) { c.train.checkpoint_dir = v; },
                     "Checkpoint directory");
  o.add<double>(app, "--grad-clip", [](ConfigFile& c, const double& v) { c.train.grad_clip = v; },
                "Max global gradient norm (0: off)");
  o.add<double>(app, "--stop-fmse-drop", [](ConfigFile& c, const double& v) { c.train.stop_fmse_drop = v; },
                "Stop once evaluated fMSE fell by this fraction of the composite baseline");
  o.add<double>(app, "--a-min", [](ConfigFile& c, const double& v) { c.train.loss.a_min = v; },
                "Foreground pixel-count floor of the loss");
}

void add_synthesis_flags(CLI::App* app, Overrides& o) {
  o.add<std::uint64_t>(app, "--seed", [](ConfigFile& c, const std::uint64_t& v) { c.synthesis.seed = v; },
                       "Synthesis seed");
  o.add<int>(app, "--min-shapes", [](ConfigFile& c, const int& v) { c.synthesis.min_shapes = v; },
             "Fewest mask shapes");
  o.add<int>(app, "--max-shapes", [](ConfigFile& c, const int& v) { c.synthesis.max_shapes = v; },
             "Most mask shapes");
  o.add<double>(app, "--min-area", [](ConfigFile& c, const double& v) { c.synthesis.min_area = v; },
                "Smallest foreground ratio");
  o.add<double>(app, "--max-area", [](ConfigFile& c, const double& v) { c.synthesis.max_area = v; },
                "Largest foreground ratio");
}

Tensor<float> load_mask(const fs::path& path) {
  Tensor<float> m = read_image(path, 1);
  for (auto& v : m.values()) v = v >= 0.5f ? 1.0f : 0.0f;
  return m;
}

std::pair<int, int> parse_point(const std::string& s) {
  int y = 0, x = 0;
  char comma = 0;
  std::istringstream is(s);
  GK_CONFIG_CHECK((is >> y >> comma >> x) && comma == ',' && is.peek() == EOF,
                  "--attn-point expects y,x, got '" << s << "'");
  return {y, x};
}

int run_synthesize(const fs::path& out, int count, int resolution, const ConfigFile& cfg) {
  auto manifest = write_synthetic_dataset(out, count, resolution, cfg.synthesis);
  std::array<int, 3> hist{};
  for (const auto& m : manifest) ++hist[static_cast<int>(bucket_of(m.ratio))];
  std::cout << "wrote " << manifest.size() << " triples to " << out.string() << " (B1=" << hist[0]
            << " B2=" << hist[1] << " B3=" << hist[2] << ")\n";
  return 0;
}

int run_train(const ConfigFile& cfg, const fs::path& data, const std::string& eval_data, const std::string& resume_from,
              const std::string& log_file) {
  const int resolution = cfg.network.resolution;
  std::vector<ImageTriple> train_set = load_dataset(index_dataset(data), resolution);
  std::vector<ImageTriple> eval_set;
  if (!eval_data.empty()) eval_set = load_dataset(index_dataset(eval_data), resolution);

  std::ofstream log_stream;
  if (!log_file.empty()) {
    log_stream.open(log_file);
    GK_CONFIG_CHECK(log_stream.good(), "cannot write log file " << log_file);
  }
  struct Tee : std::streambuf {
    std::streambuf *a, *b;
    int overflow(int c) override {
      if (c == EOF) return 0;
      a->sputc(static_cast<char>(c));
      if (b) b->sputc(static_cast<char>(c));
      return c;
    }
    int sync() override {
      a->pubsync();
      if (b) b->pubsync();
      return 0;
    }
  } tee;
  tee.a = std::cout.rdbuf();
  tee.b = log_file.empty() ? nullptr : log_stream.rdbuf();
  std::ostream log(&tee);

  TrainState state = resume_from.empty() ? TrainState(cfg.train) : resume(resume_from, &cfg.train);
  log << "# parameters=" << state.model.parameters().scalar_count() << " samples=" << train_set.size()
      << " steps=" << total_steps(state.config, static_cast<int>(train_set.size())) << " start=" << state.step
      << std::endl;
  TrainHooks hooks;
  hooks.log = &log;
  train(state, train_set, eval_set.empty() ? nullptr : &eval_set, hooks);
  if (!state.config.checkpoint_dir.empty())
    log << "# checkpoint " << (fs::path(state.config.checkpoint_dir) / "latest.ckpt").string() << std::endl;
  return 0;
}

int run_eval(const fs::path& checkpoint, const fs::path& data, const fs::path& out, bool baseline) {
  GKNet<float> model = load_checkpoint<float>(checkpoint);
  std::vector<ImageTriple> set = load_dataset(index_dataset(data), model.config().resolution);
  MetricsReport report = evaluate(model, set);
  report.write(out, "metrics");
  std::cout << report.summary("model " + checkpoint.filename().string());
  if (baseline) {
    MetricsReport base = composite_baseline(set);
    base.write(out, "baseline");
    std::cout << '\n' << base.summary("composite baseline");
  }
  return 0;
}

int run_harmonize(const fs::path& checkpoint, const fs::path& composite_path, const fs::path& mask_path,
                  const fs::path& out) {
  GKNet<float> model = load_checkpoint<float>(checkpoint);
  const Tensor<float> composite = read_image(composite_path, 3);
  const Tensor<float> mask = load_mask(mask_path);
  GK_REQUIRE(mask.dim(1) == composite.dim(1) && mask.dim(2) == composite.dim(2),
             "composite is " << composite.dim(1) << "x" << composite.dim(2) << " but mask is " << mask.dim(1) << "x"
                             << mask.dim(2));
  const int r = model.config().resolution;
  Tensor<float> comp_r = resize_bilinear(composite, r, r);
  Tensor<float> mask_r = resize_bilinear(mask, r, r);
  for (auto& v : mask_r.values()) v = v >= 0.5f ? 1.0f : 0.0f;
  Tensor<float> raw;
  {
    NoGradGuard no_grad;
    raw = model.forward(make_input(comp_r, mask_r)).output.value();
  }
  raw = resize_bilinear(raw, composite.dim(1), composite.dim(2));
  for (auto& v : raw.values()) v = std::clamp(v, 0.0f, 1.0f);
  write_png(out, blend(raw, composite, mask));
  std::cout << "wrote " << out.string() << "\n";
  return 0;
}

int run_inspect(const fs::path& checkpoint, const fs::path& input, const std::string& mask_path, int k,
                const std::string& point, const fs::path& out, std::uint64_t seed) {
  GK_CONFIG_CHECK(k >= 1, "--kernels-k must be at least 1, got " << k);
  GKNet<float> model = load_checkpoint<float>(checkpoint);
  const NetworkConfig& cfg = model.config();
  const int r = cfg.resolution;
  Tensor<float> composite = resize_bilinear(read_image(input, 3), r, r);
  Tensor<float> mask({1, r, r});
  if (!mask_path.empty()) {
    mask = resize_bilinear(load_mask(mask_path), r, r);
    for (auto& v : mask.values()) v = v >= 0.5f ? 1.0f : 0.0f;
  }
  fs::create_directories(out);
  const Tensor<float> in = make_input(composite, mask);
  NoGradGuard no_grad;
  ForwardResult<float> res = model.forward(in, {.modulation = true, .trace = true});

  for (std::size_t i = 0; i < res.kernels.levels.size(); ++i) {
    const int level = res.kernels.levels[i];
    const Tensor<float>& kt = res.kernels.kernels[i];
    const int h = kt.dim(2), w = kt.dim(3);
    KMeansResult km = kmeans(kernel_vectors(kt), h * w, kt.dim(0) * kt.dim(1), k, seed);
    const std::string stem = "kernels_l" + std::to_string(level);
    write_png(out / (stem + ".png"), upscale_nearest(label_image(km.labels, h, w), r / h));
    write_tensor_file(out / (stem + ".gkt"), kt);
    std::cout << "level " << level << ": " << h << "x" << w << " kernels, " << km.occupied << " occupied clusters of "
              << k << "\n";
  }

  const int th = cfg.size(1), tw = cfg.size(1);
  auto [py, px] = point.empty() ? std::pair<int, int>{th / 2, tw / 2} : parse_point(point);
  const Tensor<float> deepest = model.encode(Var<float>::constant(in)).at(1).value();
  const Tensor<float> maps = attention_maps(deepest, model.lre(), py, px);
  write_tensor_file(out / "attention.gkt", maps);
  const std::size_t plane = static_cast<std::size_t>(th) * tw;
  for (int h = 0; h < maps.dim(0); ++h) {
    Tensor<float> img({1, th, tw});
    float peak = 0;
    for (std::size_t t = 0; t < plane; ++t) peak = std::max(peak, maps[h * plane + t]);
    for (std::size_t t = 0; t < plane; ++t) img[t] = peak > 0 ? maps[h * plane + t] / peak : 0.0f;
    write_png(out / ("attention_head" + std::to_string(h) + ".png"), upscale_nearest(img, r / th));
  }
  std::cout << "attention from token (" << py << "," << px << ") over " << th << "x" << tw << ", " << maps.dim(0)
            << " heads\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gknet: image harmonization with predicted per-pixel kernels"};
  app.require_subcommand(1);

  // synthesize
  auto* syn = app.add_subcommand("synthesize", "Write a synthetic (composite, mask, real) dataset");
  fs::path syn_out;
  int syn_count = 8, syn_resolution = 64;
  std::string syn_config;
  Overrides syn_o;
  syn->add_option("--out", syn_out, "Output directory")->required();
  syn->add_option("--count", syn_count, "Number of triples")->capture_default_str();
  syn->add_option("--resolution", syn_resolution, "Image side length")->capture_default_str();
  syn->add_option("--config", syn_config, "Config file (synthesis section)");
  add_synthesis_flags(syn, syn_o);

  // train
  auto* tr = app.add_subcommand("train", "Train on a dataset directory");
  std::string tr_config, tr_eval, tr_resume, tr_log;
  fs::path tr_data;
  Overrides tr_o;
  tr->add_option("--data", tr_data, "Dataset root")->required();
  tr->add_option("--config", tr_config, "Config file");
  tr->add_option("--eval-data", tr_eval, "Evaluation dataset root (default: training set)");
  tr->add_option("--resume", tr_resume, "Continue from a training checkpoint");
  tr->add_option("--log", tr_log, "Also write log lines to this file");
  bool tr_full = false;
  tr->add_flag("--full-scale", tr_full, "Start from the full-scale preset instead of the desk preset");
  add_network_flags(tr, tr_o);
  add_train_flags(tr, tr_o);

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  fs::path ev_ckpt, ev_data, ev_out = ".";
  bool ev_baseline = false;
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
  ev->add_option("--data", ev_data, "Dataset root")->required();
  ev->add_option("--out", ev_out, "Directory for metrics.csv and metrics_summary.txt")->capture_default_str();
  ev->add_flag("--baseline", ev_baseline, "Also report composite-vs-real metrics");

  // harmonize
  auto* hz = app.add_subcommand("harmonize", "Harmonize one composite");
  fs::path hz_ckpt, hz_comp, hz_mask, hz_out;
  hz->add_option("--checkpoint", hz_ckpt, "Checkpoint file")->required();
  hz->add_option("--composite", hz_comp, "Composite image")->required();
  hz->add_option("--mask", hz_mask, "Foreground mask")->required();
  hz->add_option("--out", hz_out, "Output PNG")->required();

  // inspect
  auto* in = app.add_subcommand("inspect", "Cluster predicted kernels and dump attention maps");
  fs::path in_ckpt, in_input, in_out = "inspect";
  std::string in_mask, in_point;
  int in_k = 6;
  std::uint64_t in_seed = 0;
  in->add_option("--checkpoint", in_ckpt, "Checkpoint file")->required();
  in->add_option("--input", in_input, "Composite image")->required();
  in->add_option("--mask", in_mask, "Foreground mask (default: empty)");
  in->add_option("--kernels-k", in_k, "Clusters per level")->capture_default_str();
  in->add_option("--attn-point", in_point, "Query token y,x on the deepest grid (default: centre)");
  in->add_option("--out", in_out, "Output directory")->capture_default_str();
  in->add_option("--seed", in_seed, "k-means seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (syn->parsed()) {
      GK_CONFIG_CHECK(syn_count > 0, "--count must be positive, got " << syn_count);
      return run_synthesize(syn_out, syn_count, syn_resolution, resolve(syn_config, syn_o));
    }
    if (tr->parsed()) {
      ConfigFile base;
      if (tr_full) {
        base.network = NetworkConfig::full_scale();
        base.train = TrainConfig::full_scale();
      }
      if (!tr_config.empty()) base = load_config_file(tr_config, base);
      tr_o.apply(base);
      base.train.validate();
      return run_train(base, tr_data, tr_eval, tr_resume, tr_log);
    }
    if (ev->parsed()) return run_eval(ev_ckpt, ev_data, ev_out, ev_baseline);
    if (hz->parsed()) return run_harmonize(hz_ckpt, hz_comp, hz_mask, hz_out);
    if (in->parsed()) return run_inspect(in_ckpt, in_input, in_mask, in_k, in_point, in_out, in_seed);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const ContractViolation& e) {
    std::cerr << "contract violation: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
