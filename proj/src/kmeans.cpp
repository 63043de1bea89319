#include "gknet/kmeans.hpp"

#include <cmath>
#include <limits>

#include "gknet/errors.hpp"
#include "gknet/random.hpp"

namespace gknet {

namespace {

double dist2(const float* a, const std::vector<double>& c) {
  double s = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double d = a[i] - c[i];
    s += d * d;
  }
  return s;
}

}  // namespace

KMeansResult kmeans(const std::vector<float>& points, int n, int dim, int k, std::uint64_t seed, int iterations) {
  GK_CONFIG_CHECK(k >= 1, "k-means needs k >= 1, got " << k);
  GK_REQUIRE(n > 0 && dim > 0 && points.size() == static_cast<std::size_t>(n) * dim,
             "k-means point buffer has " << points.size() << " values for " << n << "x" << dim);
  const float* x = points.data();
  auto row = [&](int i) { return x + static_cast<std::size_t>(i) * dim; };

  KMeansResult r;
  Rng rng(seed);
  auto center_of = [&](int i) { return std::vector<double>(row(i), row(i) + dim); };
  r.centers.push_back(center_of(rng.uniform_int(0, n - 1)));
  std::vector<double> d2(n);
  for (int i = 0; i < n; ++i) d2[i] = dist2(row(i), r.centers[0]);
  while (static_cast<int>(r.centers.size()) < k) {
    double total = 0;
    for (double v : d2) total += v;
    int pick = 0;
    if (total > 0) {
      double u = rng.uniform() * total;
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        u -= d2[i];
        if (u < 0 && d2[i] > 0) {
          pick = i;
          break;
        }
      }
      while (d2[pick] == 0 && pick > 0) --pick;
    }
    r.centers.push_back(center_of(pick));
    for (int i = 0; i < n; ++i) d2[i] = std::min(d2[i], dist2(row(i), r.centers.back()));
  }

  r.labels.assign(n, -1);
  for (int it = 0; it < iterations; ++it) {
    bool changed = false;
#pragma omp parallel for schedule(static) reduction(|| : changed)
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = dist2(row(i), r.centers[c]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (best != r.labels[i]) changed = true;
      r.labels[i] = best;
    }
    r.iterations = it + 1;
    if (!changed) break;
    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    std::vector<int> counts(k, 0);
    for (int i = 0; i < n; ++i) {
      ++counts[r.labels[i]];
      for (int j = 0; j < dim; ++j) sums[r.labels[i]][j] += row(i)[j];
    }
    for (int c = 0; c < k; ++c)
      if (counts[c])
        for (int j = 0; j < dim; ++j) r.centers[c][j] = sums[c][j] / counts[c];
  }
  std::vector<int> counts(k, 0);
  for (int l : r.labels) ++counts[l];
  for (int c : counts) r.occupied += c > 0;
  return r;
}

std::vector<float> kernel_vectors(const Tensor<float>& kernels) {
  GK_REQUIRE(kernels.rank() == 4, "kernel_vectors expects [C, N*N, H, W], got " << to_string(kernels.shape()));
  const int c = kernels.dim(0), taps = kernels.dim(1), h = kernels.dim(2), w = kernels.dim(3);
  const int dim = c * taps, pixels = h * w;
  std::vector<float> out(static_cast<std::size_t>(pixels) * dim);
  for (int ch = 0; ch < c; ++ch)
    for (int t = 0; t < taps; ++t) {
      const float* src = kernels.data() + (static_cast<std::size_t>(ch) * taps + t) * pixels;
      for (int p = 0; p < pixels; ++p) out[static_cast<std::size_t>(p) * dim + ch * taps + t] = src[p];
    }
  return out;
}

Tensor<float> label_image(const std::vector<int>& labels, int height, int width) {
  GK_REQUIRE(labels.size() == static_cast<std::size_t>(height) * width, "label count does not match the image size");
  static constexpr float palette[12][3] = {
      {0.90f, 0.10f, 0.10f}, {0.10f, 0.60f, 0.90f}, {0.20f, 0.80f, 0.20f}, {0.95f, 0.80f, 0.10f},
      {0.60f, 0.20f, 0.80f}, {0.95f, 0.50f, 0.10f}, {0.10f, 0.80f, 0.75f}, {0.90f, 0.40f, 0.70f},
      {0.50f, 0.35f, 0.20f}, {0.55f, 0.55f, 0.55f}, {0.10f, 0.20f, 0.55f}, {0.70f, 0.90f, 0.40f}};
  Tensor<float> img({3, height, width});
  const std::size_t plane = labels.size();
  for (std::size_t p = 0; p < plane; ++p) {
    const int l = labels[p];
    float rgb[3];
    if (l < 12) {
      for (int c = 0; c < 3; ++c) rgb[c] = palette[l][c];
    } else {
      // Golden-angle hues beyond the fixed palette.
      const double hue = std::fmod(l * 0.618033988749895, 1.0) * 6.0;
      const double f = hue - std::floor(hue);
      const double v[6][3] = {{1, f, 0}, {1 - f, 1, 0}, {0, 1, f}, {0, 1 - f, 1}, {f, 0, 1}, {1, 0, 1 - f}};
      for (int c = 0; c < 3; ++c) rgb[c] = static_cast<float>(0.2 + 0.7 * v[static_cast<int>(hue) % 6][c]);
    }
    for (int c = 0; c < 3; ++c) img[c * plane + p] = rgb[c];
  }
  return img;
}

}  // namespace gknet
