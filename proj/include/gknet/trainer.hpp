#pragma once

// Adam training loop over (composite, mask, real) triples with periodic
// evaluation and resumable checkpoints.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "gknet/data.hpp"
#include "gknet/metrics.hpp"
#include "gknet/model.hpp"

namespace gknet {

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int epochs = 120;
  int batch_size = 16;
  long long max_steps = 0;  // 0: no cap beyond epochs
  std::uint64_t seed = 0;
  long long eval_interval = 0;        // 0: evaluate only at the end
  long long checkpoint_interval = 0;  // 0: checkpoint only at the end
  long long log_interval = 1;
  std::string checkpoint_dir;         // empty: no checkpoints
  double grad_clip = 0;               // max global gradient L2 norm; 0 disables
  // Stop once evaluated fMSE has fallen by this fraction of the composite
  // baseline; 0 disables.
  double stop_fmse_drop = 0;
  LossConfig loss;
  NetworkConfig network;

  void validate() const;
  static TrainConfig full_scale();
  static TrainConfig desk();
  bool operator==(const TrainConfig&) const = default;
};

struct AdamState {
  long long t = 0;
  std::map<std::string, Tensor<float>> m, v;
};

struct EvalRecord {
  long long step = -1;
  double fmse = std::numeric_limits<double>::infinity();
  double mse = 0;
  double psnr = 0;
};

struct TrainState {
  TrainConfig config;
  GKNet<float> model;
  AdamState adam;
  long long step = 0;
  EvalRecord best;
  EvalRecord last;

  explicit TrainState(const TrainConfig& cfg);
  TrainState(TrainConfig cfg, GKNet<float> net);
};

struct StepLog {
  long long step = 0;  // 1-based index of the completed update
  double loss = 0;
  double lr = 0;
  double seconds = 0;  // wall time since train() started
  std::vector<std::string> batch_ids;
};

// "step=<n> loss=<x> lr=<x> time=<s>"
std::string format_log_line(const StepLog& log);
// Parses a log line back into (step, loss); returns false for other lines.
bool parse_log_line(const std::string& line, long long& step, double& loss);

struct TrainHooks {
  std::ostream* log = nullptr;  // log lines and eval summaries
  std::function<void(const StepLog&)> on_step;
  std::function<void(long long step, const MetricsReport&)> on_eval;
};

long long steps_per_epoch(int dataset_size, int batch_size);
long long total_steps(const TrainConfig& cfg, int dataset_size);
// Sample indices for the update following `step` completed updates; a pure
// function of (seed, step), so resumed runs draw the same batches.
std::vector<int> batch_indices(const TrainConfig& cfg, int dataset_size, long long step);

// One Adam update on the given batch; returns the mean sample loss.
double train_step(TrainState& state, const std::vector<ImageTriple>& data, const std::vector<int>& batch);

// Runs until total_steps(), `until_step` (if >= 0) or the fMSE stop rule.
// eval_set defaults to the training set when null.
void train(TrainState& state, const std::vector<ImageTriple>& train_set,
           const std::vector<ImageTriple>* eval_set = nullptr, const TrainHooks& hooks = {},
           long long until_step = -1);

TrainState train(const DatasetIndex& dataset, const TrainConfig& cfg, const TrainHooks& hooks = {});

template <typename T>
MetricsReport evaluate(const GKNet<T>& model, const std::vector<ImageTriple>& data);
MetricsReport composite_baseline(const std::vector<ImageTriple>& data);

// Harmonised (blended) image for one triple, clamped to [0,1].
Tensor<float> harmonize(const GKNet<float>& model, const Tensor<float>& composite, const Tensor<float>& mask);

void save_train_state(const std::filesystem::path& path, const TrainState& state);
// Restores parameters, Adam moments, step and eval records. When `expected`
// is given, its network, seed and batch size must match the checkpoint; the
// remaining fields (step caps, intervals, lr) replace the stored ones.
TrainState resume(const std::filesystem::path& path, const TrainConfig* expected = nullptr);

}  // namespace gknet
