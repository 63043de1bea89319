#include "gknet/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <sstream>

#include "gknet/checkpoint.hpp"

namespace gknet {

void TrainConfig::validate() const {
  GK_CONFIG_CHECK(lr > 0 && std::isfinite(lr), "learning rate must be positive, got " << lr);
  GK_CONFIG_CHECK(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1,
                  "Adam betas must lie in (0,1), got " << beta1 << ", " << beta2);
  GK_CONFIG_CHECK(eps > 0, "Adam epsilon must be positive");
  GK_CONFIG_CHECK(epochs >= 0, "epochs must be non-negative, got " << epochs);
  GK_CONFIG_CHECK(batch_size > 0, "batch size must be positive, got " << batch_size);
  GK_CONFIG_CHECK(max_steps >= 0 && eval_interval >= 0 && checkpoint_interval >= 0 && log_interval >= 0,
                  "step counts and intervals must be non-negative");
  GK_CONFIG_CHECK(grad_clip >= 0, "grad_clip must be non-negative");
  GK_CONFIG_CHECK(stop_fmse_drop >= 0 && stop_fmse_drop < 1, "stop_fmse_drop must lie in [0,1)");
  loss.validate();
  network.validate();
}

TrainConfig TrainConfig::full_scale() {
  TrainConfig c;
  c.network = NetworkConfig::full_scale();
  return c;
}

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.network = NetworkConfig::desk();
  c.batch_size = 4;
  c.epochs = 1000;
  c.max_steps = 2000;
  c.eval_interval = 100;
  c.log_interval = 10;
  return c;
}

TrainState::TrainState(const TrainConfig& cfg) : TrainState(cfg, GKNet<float>(cfg.network, cfg.seed)) {}

TrainState::TrainState(TrainConfig cfg, GKNet<float> net) : config(std::move(cfg)), model(std::move(net)) {
  config.validate();
  for (const auto& [name, var] : model.parameters().all()) {
    adam.m.emplace(name, Tensor<float>(var.shape()));
    adam.v.emplace(name, Tensor<float>(var.shape()));
  }
}

std::string format_log_line(const StepLog& log) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "step=%lld loss=%.9g lr=%.6g time=%.3f", log.step, log.loss, log.lr, log.seconds);
  return buf;
}

bool parse_log_line(const std::string& line, long long& step, double& loss) {
  double lr = 0, t = 0;
  return std::sscanf(line.c_str(), "step=%lld loss=%lf lr=%lf time=%lf", &step, &loss, &lr, &t) == 4;
}

long long steps_per_epoch(int dataset_size, int batch_size) {
  GK_REQUIRE(dataset_size > 0 && batch_size > 0, "steps_per_epoch needs a non-empty dataset");
  return (dataset_size + batch_size - 1) / batch_size;
}

long long total_steps(const TrainConfig& cfg, int dataset_size) {
  const long long n = static_cast<long long>(cfg.epochs) * steps_per_epoch(dataset_size, cfg.batch_size);
  return cfg.max_steps > 0 ? std::min(n, cfg.max_steps) : n;
}

std::vector<int> batch_indices(const TrainConfig& cfg, int dataset_size, long long step) {
  const long long spe = steps_per_epoch(dataset_size, cfg.batch_size);
  const long long epoch = step / spe, k = step % spe;
  std::vector<int> perm(dataset_size);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(mix_seed(cfg.seed ^ 0x5348554646ULL, static_cast<std::uint64_t>(epoch)));
  for (int i = dataset_size - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(0, i)]);
  const long long begin = k * cfg.batch_size;
  const long long end = std::min<long long>(begin + cfg.batch_size, dataset_size);
  return {perm.begin() + begin, perm.begin() + end};
}

namespace {

std::string describe_batch(const std::vector<ImageTriple>& data, const std::vector<int>& batch) {
  std::string s;
  for (int i : batch) s += (s.empty() ? "" : ",") + data[i].id;
  return s;
}

}  // namespace

double train_step(TrainState& state, const std::vector<ImageTriple>& data, const std::vector<int>& batch) {
  GK_REQUIRE(!batch.empty(), "train_step on an empty batch");
  auto& store = state.model.parameters();
  store.zero_grad();
  const float inv = 1.0f / static_cast<float>(batch.size());
  const Tensor<float> seed({1}, inv);
  double loss_sum = 0;
  for (int i : batch) {
    const ImageTriple& t = data.at(static_cast<std::size_t>(i));
    ForwardResult<float> res = state.model.forward(make_input(t.composite, t.mask));
    Var<float> loss = fn_mse_loss(blend(res.output, t.composite, t.mask), t.real, t.mask, state.config.loss);
    const double value = loss.value()[0];
    if (!std::isfinite(value))
      throw TrainingError("non-finite loss at step " + std::to_string(state.step + 1) + " on sample " + t.id +
                          " (batch " + describe_batch(data, batch) + ")");
    loss_sum += value;
    backward(loss, &seed);
  }

  float clip = 1.0f;
  if (state.config.grad_clip > 0) {
    double norm2 = 0;
    for (const auto& [_, var] : store.all())
      for (float g : var.grad().values()) norm2 += static_cast<double>(g) * g;
    const double norm = std::sqrt(norm2);
    if (norm > state.config.grad_clip) clip = static_cast<float>(state.config.grad_clip / norm);
  }

  AdamState& adam = state.adam;
  ++adam.t;
  const auto& cfg = state.config;
  const float b1 = static_cast<float>(cfg.beta1), b2 = static_cast<float>(cfg.beta2);
  const float c1 = static_cast<float>(1.0 / (1.0 - std::pow(cfg.beta1, static_cast<double>(adam.t))));
  const float c2 = static_cast<float>(1.0 / (1.0 - std::pow(cfg.beta2, static_cast<double>(adam.t))));
  const float lr = static_cast<float>(cfg.lr), eps = static_cast<float>(cfg.eps);
  for (const auto& [name, var] : store.all()) {
    Var<float> p = var;
    const Tensor<float>& grad = p.grad();
    if (grad.size() == 0) continue;  // parameter unused by this configuration
    float* w = p.mutable_value().data();
    float* m = adam.m.at(name).data();
    float* v = adam.v.at(name).data();
    const std::size_t n = grad.size();
#pragma omp parallel for schedule(static) if (n > 4096)
    for (std::size_t i = 0; i < n; ++i) {
      const float g = grad[i] * clip;
      m[i] = b1 * m[i] + (1.0f - b1) * g;
      v[i] = b2 * v[i] + (1.0f - b2) * g * g;
      w[i] -= lr * (m[i] * c1) / (std::sqrt(v[i] * c2) + eps);
    }
  }
  ++state.step;
  return loss_sum / static_cast<double>(batch.size());
}

template <typename T>
MetricsReport evaluate(const GKNet<T>& model, const std::vector<ImageTriple>& data) {
  GK_CONFIG_CHECK(!data.empty(), "evaluation set is empty");
  NoGradGuard no_grad;
  std::vector<SampleMetrics> rows;
  rows.reserve(data.size());
  for (const ImageTriple& t : data) {
    const Tensor<T> comp = t.composite.cast<T>(), mask = t.mask.cast<T>(), real = t.real.cast<T>();
    ForwardResult<T> res = model.forward(make_input(comp, mask));
    rows.push_back(measure(blend(res.output.value(), comp, mask), real, mask, t.id));
  }
  return MetricsReport::from_samples(std::move(rows));
}

MetricsReport composite_baseline(const std::vector<ImageTriple>& data) {
  GK_CONFIG_CHECK(!data.empty(), "evaluation set is empty");
  std::vector<SampleMetrics> rows;
  for (const ImageTriple& t : data) rows.push_back(measure(t.composite, t.real, t.mask, t.id));
  return MetricsReport::from_samples(std::move(rows));
}

Tensor<float> harmonize(const GKNet<float>& model, const Tensor<float>& composite, const Tensor<float>& mask) {
  NoGradGuard no_grad;
  ForwardResult<float> res = model.forward(make_input(composite, mask));
  Tensor<float> out = res.output.value();
  for (auto& v : out.values()) v = std::clamp(v, 0.0f, 1.0f);
  return blend(out, composite, mask);
}

namespace {

json record_json(const EvalRecord& r) {
  return json{{"step", r.step}, {"fmse", std::isfinite(r.fmse) ? json(r.fmse) : json()}, {"mse", r.mse}, {"psnr", r.psnr}};
}

EvalRecord record_from(const json& j) {
  EvalRecord r;
  r.step = j.at("step").get<long long>();
  if (!j.at("fmse").is_null()) r.fmse = j.at("fmse").get<double>();
  r.mse = j.at("mse").get<double>();
  r.psnr = j.at("psnr").get<double>();
  return r;
}

std::filesystem::path checkpoint_path(const TrainConfig& cfg, long long step) {
  char name[48];
  std::snprintf(name, sizeof name, "step_%08lld.ckpt", step);
  return std::filesystem::path(cfg.checkpoint_dir) / name;
}

void write_checkpoints(const TrainState& state) {
  if (state.config.checkpoint_dir.empty()) return;
  save_train_state(checkpoint_path(state.config, state.step), state);
  save_train_state(std::filesystem::path(state.config.checkpoint_dir) / "latest.ckpt", state);
}

}  // namespace

void save_train_state(const std::filesystem::path& path, const TrainState& state) {
  CheckpointData data;
  data.kind = "train";
  data.network = state.config.network;
  data.tensors = export_parameters(state.model);
  for (const auto& [name, t] : state.adam.m) data.tensors.emplace("adam.m." + name, t);
  for (const auto& [name, t] : state.adam.v) data.tensors.emplace("adam.v." + name, t);
  data.state = json{{"train", state.config},
                    {"step", state.step},
                    {"adam_t", state.adam.t},
                    {"best", record_json(state.best)},
                    {"last", record_json(state.last)}};
  write_checkpoint(path, data);
}

TrainState resume(const std::filesystem::path& path, const TrainConfig* expected) {
  CheckpointData data = read_checkpoint(path);
  GK_CONFIG_CHECK(data.kind == "train", path.string() << " holds no optimizer state (kind '" << data.kind << "')");
  TrainConfig stored = data.state.at("train").get<TrainConfig>();
  stored.network = data.network;
  TrainConfig cfg = stored;
  if (expected) {
    require_same_network(expected->network, data.network);
    GK_CONFIG_CHECK(expected->seed == stored.seed, "resume seed " << expected->seed << " differs from checkpoint seed "
                                                                 << stored.seed);
    GK_CONFIG_CHECK(expected->batch_size == stored.batch_size, "resume batch size "
                                                                   << expected->batch_size
                                                                   << " differs from checkpoint batch size "
                                                                   << stored.batch_size);
    cfg = *expected;
  }
  GKNet<float> model(data.network, 0);
  std::map<std::string, Tensor<float>> params, m, v;
  for (auto& [name, t] : data.tensors) {
    if (name.rfind("adam.m.", 0) == 0)
      m.emplace(name.substr(7), std::move(t));
    else if (name.rfind("adam.v.", 0) == 0)
      v.emplace(name.substr(7), std::move(t));
    else
      params.emplace(name, std::move(t));
  }
  import_parameters(model, params);
  TrainState state(cfg, std::move(model));
  for (auto& [name, t] : state.adam.m) {
    GK_CONFIG_CHECK(m.count(name) && v.count(name), "checkpoint lacks optimizer moments for " << name);
    GK_CONFIG_CHECK(m.at(name).shape() == t.shape() && v.at(name).shape() == t.shape(),
                    "optimizer moment shape mismatch for " << name);
    t = std::move(m.at(name));
    state.adam.v.at(name) = std::move(v.at(name));
  }
  state.step = data.state.at("step").get<long long>();
  state.adam.t = data.state.at("adam_t").get<long long>();
  state.best = record_from(data.state.at("best"));
  state.last = record_from(data.state.at("last"));
  return state;
}

void train(TrainState& state, const std::vector<ImageTriple>& train_set,
           const std::vector<ImageTriple>* eval_set, const TrainHooks& hooks, long long until_step) {
  GK_CONFIG_CHECK(!train_set.empty(), "training set is empty");
  const TrainConfig& cfg = state.config;
  cfg.validate();
  for (const ImageTriple& t : train_set)
    GK_CONFIG_CHECK(t.composite.dim(1) == cfg.network.resolution && t.composite.dim(2) == cfg.network.resolution,
                    "sample " << t.id << " is " << t.composite.dim(1) << "x" << t.composite.dim(2)
                              << ", network expects " << cfg.network.resolution);
  const std::vector<ImageTriple>& eval_data = eval_set ? *eval_set : train_set;
  const int n = static_cast<int>(train_set.size());
  long long last_step = total_steps(cfg, n);
  if (until_step >= 0) last_step = std::min(last_step, until_step);

  double baseline_fmse = 0;
  if (cfg.stop_fmse_drop > 0) baseline_fmse = composite_baseline(eval_data).overall.fmse;

  const auto start = std::chrono::steady_clock::now();
  auto run_eval = [&]() {
    MetricsReport report = evaluate(state.model, eval_data);
    state.last = {state.step, report.overall.fmse, report.overall.mse, report.overall.psnr};
    if (std::isfinite(report.overall.fmse) && report.overall.fmse < state.best.fmse) state.best = state.last;
    if (hooks.log) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "eval step=%lld psnr=%.4f mse=%.4f fmse=%.4f", state.step, report.overall.psnr,
                    report.overall.mse, report.overall.fmse);
      *hooks.log << buf << std::endl;
    }
    if (hooks.on_eval) hooks.on_eval(state.step, report);
    return report;
  };

  if (state.step == 0 && cfg.checkpoint_interval > 0) write_checkpoints(state);
  bool stopped = false;
  while (state.step < last_step) {
    const std::vector<int> batch = batch_indices(cfg, n, state.step);
    StepLog log;
    log.loss = train_step(state, train_set, batch);
    log.step = state.step;
    log.lr = cfg.lr;
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    for (int i : batch) log.batch_ids.push_back(train_set[i].id);
    if (hooks.log && cfg.log_interval > 0 && (state.step % cfg.log_interval == 0 || state.step == 1 || state.step == last_step))
      *hooks.log << format_log_line(log) << std::endl;
    if (hooks.on_step) hooks.on_step(log);
    if (cfg.eval_interval > 0 && state.step % cfg.eval_interval == 0) {
      MetricsReport r = run_eval();
      if (cfg.stop_fmse_drop > 0 && r.overall.fmse <= (1.0 - cfg.stop_fmse_drop) * baseline_fmse) {
        if (hooks.log) *hooks.log << "stop: fMSE fell below " << (1.0 - cfg.stop_fmse_drop) << " of the composite baseline" << std::endl;
        stopped = true;
      }
    }
    if (cfg.checkpoint_interval > 0 && state.step % cfg.checkpoint_interval == 0) write_checkpoints(state);
    if (stopped) break;
  }
  if (state.last.step != state.step) run_eval();
  write_checkpoints(state);
}

TrainState train(const DatasetIndex& dataset, const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  std::vector<ImageTriple> data = load_dataset(dataset, cfg.network.resolution);
  TrainState state(cfg);
  train(state, data, nullptr, hooks);
  return state;
}

template MetricsReport evaluate<float>(const GKNet<float>&, const std::vector<ImageTriple>&);
template MetricsReport evaluate<double>(const GKNet<double>&, const std::vector<ImageTriple>&);

}  // namespace gknet
