#include "gknet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>

namespace gknet {

void LossConfig::validate() const {
  GK_CONFIG_CHECK(a_min > 0 && std::isfinite(a_min), "loss a_min must be positive, got " << a_min);
}

namespace {

template <typename T>
void require_pair(const Tensor<T>& pred, const Tensor<T>& real, const char* op) {
  GK_REQUIRE(pred.shape() == real.shape(),
             op << ": prediction " << to_string(pred.shape()) << " vs target " << to_string(real.shape()));
  GK_REQUIRE(pred.rank() == 3 && pred.dim(0) == 3, op << " expects [3,H,W] images");
}

template <typename T>
void require_mask(const Tensor<T>& image, const Tensor<T>& mask, const char* op) {
  GK_REQUIRE(mask.rank() == 3 && mask.dim(0) == 1 && mask.dim(1) == image.dim(1) &&
                 mask.dim(2) == image.dim(2),
             op << ": mask " << to_string(mask.shape()) << " does not match " << to_string(image.shape()));
}

template <typename T>
double loss_denominator(const Tensor<T>& mask, const LossConfig& cfg) {
  double area = 0;
  for (T v : mask.values()) area += static_cast<double>(v);
  return std::max(cfg.a_min, area);
}

double to255(double v) { return std::clamp(v, 0.0, 1.0) * 255.0; }

}  // namespace

template <typename T>
double fn_mse_loss(const Tensor<T>& pred, const Tensor<T>& real, const Tensor<T>& mask,
                   const LossConfig& cfg) {
  require_pair(pred, real, "fn_mse_loss");
  require_mask(pred, mask, "fn_mse_loss");
  double num = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(real[i]);
    num += d * d;
  }
  return num / loss_denominator(mask, cfg);
}

template <typename T>
Var<T> fn_mse_loss(const Var<T>& pred, const Tensor<T>& real, const Tensor<T>& mask,
                   const LossConfig& cfg) {
  const double value = fn_mse_loss(pred.value(), real, mask, cfg);
  const double denom = loss_denominator(mask, cfg);
  return make_result<T>(Tensor<T>({1}, static_cast<T>(value)), {pred}, [real, denom](Node<T>& self) {
    T* gp = self.input_grad(0);
    if (!gp) return;
    const Tensor<T>& p = self.input(0);
    const T s = static_cast<T>(2.0 / denom) * self.grad[0];
    for (std::size_t i = 0; i < p.size(); ++i) gp[i] += s * (p[i] - real[i]);
  });
}

template <typename T>
double mse(const Tensor<T>& pred, const Tensor<T>& real) {
  require_pair(pred, real, "mse");
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = to255(pred[i]) - to255(real[i]);
    s += d * d;
  }
  return s / static_cast<double>(pred.size());
}

double psnr_from_mse(double m) {
  if (m < 255.0 * 255.0 * 1e-10) return 100.0;
  return 10.0 * std::log10(255.0 * 255.0 / m);
}

template <typename T>
double psnr(const Tensor<T>& pred, const Tensor<T>& real) {
  return psnr_from_mse(mse(pred, real));
}

template <typename T>
std::optional<double> fmse(const Tensor<T>& pred, const Tensor<T>& real, const Tensor<T>& mask) {
  require_pair(pred, real, "fmse");
  require_mask(pred, mask, "fmse");
  const std::size_t plane = mask.size();
  double s = 0;
  std::size_t fg = 0;
  for (std::size_t i = 0; i < plane; ++i) {
    if (mask[i] == T(0)) continue;
    ++fg;
    for (int c = 0; c < 3; ++c) {
      const double d = to255(pred[c * plane + i]) - to255(real[c * plane + i]);
      s += d * d;
    }
  }
  if (fg == 0) return std::nullopt;
  return s / (3.0 * static_cast<double>(fg));
}

template <typename T>
SampleMetrics measure(const Tensor<T>& pred, const Tensor<T>& real, const Tensor<T>& mask,
                      std::string id) {
  SampleMetrics m;
  m.id = std::move(id);
  m.ratio = foreground_ratio(mask.template cast<float>());
  m.bucket = bucket_of(m.ratio);
  m.mse = mse(pred, real);
  m.psnr = psnr_from_mse(m.mse);
  m.fmse = fmse(pred, real, mask);
  return m;
}

namespace {

void accumulate(MetricsAggregate& a, const SampleMetrics& s) {
  ++a.count;
  a.mse += s.mse;
  a.psnr += s.psnr;
  if (s.fmse) {
    ++a.fmse_count;
    a.fmse += *s.fmse;
  }
}

void finish(MetricsAggregate& a) {
  if (a.count) {
    a.mse /= a.count;
    a.psnr /= a.count;
  }
  a.fmse = a.fmse_count ? a.fmse / a.fmse_count : std::numeric_limits<double>::quiet_NaN();
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

MetricsReport MetricsReport::from_samples(std::vector<SampleMetrics> samples) {
  MetricsReport r;
  r.samples = std::move(samples);
  for (const auto& s : r.samples) {
    accumulate(r.overall, s);
    accumulate(r.buckets[static_cast<int>(s.bucket)], s);
  }
  finish(r.overall);
  for (auto& b : r.buckets) finish(b);
  return r;
}

void MetricsReport::write_csv(std::ostream& os) const {
  os << "id,ratio,bucket,mse,psnr,fmse\n";
  for (const auto& s : samples)
    os << s.id << ',' << fmt17(s.ratio) << ',' << bucket_name(s.bucket) << ',' << fmt17(s.mse) << ','
       << fmt17(s.psnr) << ',' << (s.fmse ? fmt17(*s.fmse) : std::string("NA")) << '\n';
}

std::string MetricsReport::summary(const std::string& title) const {
  std::ostringstream os;
  char line[160];
  if (!title.empty()) os << title << '\n';
  std::snprintf(line, sizeof line, "%-18s %6s %10s %10s %10s\n", "split", "count", "PSNR", "MSE", "fMSE");
  os << line;
  auto row = [&](const std::string& name, const MetricsAggregate& a) {
    std::snprintf(line, sizeof line, "%-18s %6d %10.2f %10.2f %10.2f\n", name.c_str(), a.count, a.psnr,
                  a.mse, a.fmse);
    os << line;
  };
  row("all", overall);
  for (Bucket b : {Bucket::B1, Bucket::B2, Bucket::B3})
    row(std::string(bucket_name(b)) + " " + bucket_range(b), bucket(b));
  return os.str();
}

void MetricsReport::write(const std::filesystem::path& dir, const std::string& stem) const {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  std::ofstream csv(dir / (stem + ".csv"));
  GK_CONFIG_CHECK(csv.good(), "cannot write " << (dir / (stem + ".csv")).string());
  write_csv(csv);
  std::ofstream txt(dir / (stem + "_summary.txt"));
  GK_CONFIG_CHECK(txt.good(), "cannot write " << (dir / (stem + "_summary.txt")).string());
  txt << summary();
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) {
    cell.erase(0, cell.find_first_not_of(" \t\r"));
    cell.erase(cell.find_last_not_of(" \t\r") + 1);
    out.push_back(cell);
  }
  return out;
}

}  // namespace

MetricsReport read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  GK_CONFIG_CHECK(is.good(), "cannot read metrics CSV " << path.string());
  std::string line;
  std::getline(is, line);
  std::vector<SampleMetrics> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto cells = split_csv(line);
    GK_CONFIG_CHECK(cells.size() == 6, "malformed metrics row: " << line);
    SampleMetrics s;
    s.id = cells[0];
    s.ratio = std::stod(cells[1]);
    s.bucket = bucket_of(s.ratio);
    s.mse = std::stod(cells[3]);
    s.psnr = std::stod(cells[4]);
    if (cells[5] != "NA") s.fmse = std::stod(cells[5]);
    rows.push_back(std::move(s));
  }
  return MetricsReport::from_samples(std::move(rows));
}

PairwiseTable PairwiseTable::from_matrix(std::vector<std::string> methods,
                                         std::vector<std::vector<long long>> wins) {
  PairwiseTable t{std::move(methods), std::move(wins)};
  t.validate();
  return t;
}

void PairwiseTable::validate() const {
  const std::size_t k = methods.size();
  GK_CONFIG_CHECK(k >= 2, "pairwise table needs at least two methods");
  GK_CONFIG_CHECK(wins.size() == k, "win matrix has " << wins.size() << " rows for " << k << " methods");
  for (std::size_t i = 0; i < k; ++i) {
    GK_CONFIG_CHECK(wins[i].size() == k, "win matrix row " << i << " has " << wins[i].size() << " entries");
    GK_CONFIG_CHECK(wins[i][i] == 0, "win matrix diagonal must be zero (" << methods[i] << ")");
    for (long long w : wins[i]) GK_CONFIG_CHECK(w >= 0, "negative win count for " << methods[i]);
  }
}

PairwiseTable PairwiseTable::read_csv(std::istream& is) {
  std::string line;
  GK_CONFIG_CHECK(static_cast<bool>(std::getline(is, line)), "empty pairwise CSV");
  auto header = split_csv(line);
  GK_CONFIG_CHECK(header == (std::vector<std::string>{"method_a", "method_b", "wins_a", "wins_b"}),
                  "pairwise CSV header must be method_a,method_b,wins_a,wins_b");
  std::map<std::string, int> index;
  PairwiseTable t;
  auto id = [&](const std::string& name) {
    auto [it, added] = index.emplace(name, static_cast<int>(t.methods.size()));
    if (added) {
      t.methods.push_back(name);
      for (auto& row : t.wins) row.push_back(0);
      t.wins.emplace_back(t.methods.size(), 0);
    }
    return it->second;
  };
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto cells = split_csv(line);
    GK_CONFIG_CHECK(cells.size() == 4, "malformed pairwise row: " << line);
    GK_CONFIG_CHECK(cells[0] != cells[1], "method compared against itself: " << line);
    const int a = id(cells[0]), b = id(cells[1]);
    long long wa = 0, wb = 0;
    try {
      std::size_t pa = 0, pb = 0;
      wa = std::stoll(cells[2], &pa);
      wb = std::stoll(cells[3], &pb);
      GK_CONFIG_CHECK(pa == cells[2].size() && pb == cells[3].size(), "non-integer win count: " << line);
    } catch (const std::logic_error&) {
      throw ConfigError("non-integer win count: " + line);
    }
    GK_CONFIG_CHECK(wa >= 0 && wb >= 0, "negative win count: " << line);
    t.wins[a][b] += wa;
    t.wins[b][a] += wb;
  }
  t.validate();
  return t;
}

PairwiseTable PairwiseTable::read_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  GK_CONFIG_CHECK(is.good(), "cannot read pairwise CSV " << path.string());
  return read_csv(is);
}

BtFit bt_scores(const PairwiseTable& table, double tolerance, int max_iterations) {
  table.validate();
  const int k = table.size();

  // Connected components of the comparison graph.
  std::vector<int> component(k, -1);
  int components = 0;
  for (int s = 0; s < k; ++s) {
    if (component[s] >= 0) continue;
    std::vector<int> stack{s};
    component[s] = components;
    while (!stack.empty()) {
      const int i = stack.back();
      stack.pop_back();
      for (int j = 0; j < k; ++j)
        if (component[j] < 0 && table.wins[i][j] + table.wins[j][i] > 0) {
          component[j] = components;
          stack.push_back(j);
        }
    }
    ++components;
  }
  if (components > 1) {
    std::ostringstream os;
    os << "comparison graph is disconnected:";
    for (int c = 0; c < components; ++c) {
      os << (c ? " |" : "") << " {";
      bool first = true;
      for (int i = 0; i < k; ++i)
        if (component[i] == c) {
          os << (first ? "" : ", ") << table.methods[i];
          first = false;
        }
      os << "}";
    }
    throw ConfigError(os.str());
  }

  std::vector<double> w(k, 0.0);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) w[i] += static_cast<double>(table.wins[i][j]);

  BtFit fit;
  std::vector<double> p(k, 1.0), next(k);
  for (int it = 0; it < max_iterations; ++it) {
    for (int i = 0; i < k; ++i) {
      double denom = 0;
      for (int j = 0; j < k; ++j) {
        if (j == i) continue;
        const double n = static_cast<double>(table.wins[i][j] + table.wins[j][i]);
        if (n > 0) denom += n / (p[i] + p[j]);
      }
      next[i] = w[i] / denom;
    }
    double total = 0;
    for (double v : next) total += v;
    double delta = 0;
    for (int i = 0; i < k; ++i) {
      next[i] *= k / total;
      delta = std::max(delta, std::abs(next[i] - p[i]));
    }
    p.swap(next);
    fit.iterations = it + 1;
    if (delta < tolerance) {
      fit.converged = true;
      break;
    }
  }
  fit.strengths = p;
  fit.scores.resize(k);
  double mean = 0;
  int finite = 0;
  for (int i = 0; i < k; ++i) {
    fit.scores[i] = p[i] > 0 ? std::log(p[i]) : -std::numeric_limits<double>::infinity();
    if (std::isfinite(fit.scores[i])) {
      mean += fit.scores[i];
      ++finite;
    }
  }
  if (finite) mean /= finite;
  for (double& s : fit.scores)
    if (std::isfinite(s)) s -= mean;
  return fit;
}

double bt_log_likelihood(const PairwiseTable& table, const std::vector<double>& scores) {
  GK_REQUIRE(static_cast<int>(scores.size()) == table.size(), "score vector does not match the table");
  double ll = 0;
  for (int i = 0; i < table.size(); ++i)
    for (int j = 0; j < table.size(); ++j) {
      if (i == j || table.wins[i][j] == 0) continue;
      // log(p_i / (p_i + p_j)) with p = exp(score)
      const double d = scores[j] - scores[i];
      ll -= static_cast<double>(table.wins[i][j]) * (d > 0 ? d + std::log1p(std::exp(-d)) : std::log1p(std::exp(d)));
    }
  return ll;
}

#define GKNET_INSTANTIATE_METRICS(T)                                                                  \
  template double fn_mse_loss<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const LossConfig&); \
  template Var<T> fn_mse_loss<T>(const Var<T>&, const Tensor<T>&, const Tensor<T>&, const LossConfig&);    \
  template double mse<T>(const Tensor<T>&, const Tensor<T>&);                                         \
  template double psnr<T>(const Tensor<T>&, const Tensor<T>&);                                        \
  template std::optional<double> fmse<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);      \
  template SampleMetrics measure<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::string);

GKNET_INSTANTIATE_METRICS(float)
GKNET_INSTANTIATE_METRICS(double)

}  // namespace gknet
