#pragma once

// Training objective, image metrics on the [0,255] scale, per-bucket
// reports and Bradley-Terry scoring of pairwise preference counts.

#include <array>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "gknet/autograd.hpp"
#include "gknet/data.hpp"

namespace gknet {

struct LossConfig {
  double a_min = 100.0;  // floor on the foreground pixel count

  void validate() const;
  bool operator==(const LossConfig&) const = default;
};

// sum ||pred - real||^2 over all pixels and channels / max(a_min, sum mask).
// pred is the blended output, so background pixels contribute nothing.
template <typename T>
double fn_mse_loss(const Tensor<T>& pred, const Tensor<T>& real, const Tensor<T>& mask,
                   const LossConfig& cfg);
template <typename T>
Var<T> fn_mse_loss(const Var<T>& pred, const Tensor<T>& real, const Tensor<T>& mask,
                   const LossConfig& cfg);

// Images in [0,1]; both are clamped to [0,1] and scaled by 255 first.
template <typename T>
double mse(const Tensor<T>& pred, const Tensor<T>& real);
double psnr_from_mse(double mse);
template <typename T>
double psnr(const Tensor<T>& pred, const Tensor<T>& real);
// Squared error over foreground pixels / (3 * foreground count); nullopt for an empty mask.
template <typename T>
std::optional<double> fmse(const Tensor<T>& pred, const Tensor<T>& real, const Tensor<T>& mask);

struct SampleMetrics {
  std::string id;
  double ratio = 0;
  Bucket bucket = Bucket::B1;
  double mse = 0;
  double psnr = 0;
  std::optional<double> fmse;
};

template <typename T>
SampleMetrics measure(const Tensor<T>& pred, const Tensor<T>& real, const Tensor<T>& mask,
                      std::string id);

struct MetricsAggregate {
  int count = 0;
  int fmse_count = 0;  // samples with a defined fMSE
  double mse = 0;
  double psnr = 0;
  double fmse = 0;
};

struct MetricsReport {
  std::vector<SampleMetrics> samples;
  MetricsAggregate overall;
  std::array<MetricsAggregate, 3> buckets;  // B1, B2, B3

  static MetricsReport from_samples(std::vector<SampleMetrics> samples);
  const MetricsAggregate& bucket(Bucket b) const { return buckets[static_cast<int>(b)]; }

  void write_csv(std::ostream& os) const;
  std::string summary(const std::string& title = "") const;
  // Writes <dir>/<stem>.csv and <dir>/<stem>_summary.txt.
  void write(const std::filesystem::path& dir, const std::string& stem = "metrics") const;
};

// Parses write_csv output; aggregates are recomputed from the rows.
MetricsReport read_metrics_csv(const std::filesystem::path& path);

struct PairwiseTable {
  std::vector<std::string> methods;
  std::vector<std::vector<long long>> wins;  // wins[i][j]: times i preferred over j

  static PairwiseTable from_matrix(std::vector<std::string> methods,
                                   std::vector<std::vector<long long>> wins);
  // CSV with header method_a,method_b,wins_a,wins_b; repeated pairs accumulate.
  static PairwiseTable read_csv(std::istream& is);
  static PairwiseTable read_csv(const std::filesystem::path& path);
  void validate() const;
  int size() const { return static_cast<int>(methods.size()); }
};

struct BtFit {
  std::vector<double> strengths;  // normalised to sum to K
  std::vector<double> scores;     // ln(strength), shifted to zero mean
  int iterations = 0;
  bool converged = false;
};

// Fixed-point maximum-likelihood fit. A method with no wins has strength 0 and
// score -inf; the zero-mean shift then uses the finite scores only.
// Throws ConfigError naming the components when the comparison graph is disconnected.
BtFit bt_scores(const PairwiseTable& table, double tolerance = 1e-10, int max_iterations = 10000);

// Log-likelihood of strengths under the table (used by tests and diagnostics).
double bt_log_likelihood(const PairwiseTable& table, const std::vector<double>& scores);

}  // namespace gknet
