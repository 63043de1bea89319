#pragma once

// Seeded k-means (k-means++ init, Lloyd iterations, Euclidean distance) used
// to visualise per-pixel kernel fields.

#include <cstdint>
#include <vector>

#include "gknet/tensor.hpp"

namespace gknet {

struct KMeansResult {
  std::vector<int> labels;                   // per point, in [0, k)
  std::vector<std::vector<double>> centers;  // k x dim
  int occupied = 0;                          // clusters with at least one point
  int iterations = 0;
};

// points: n x dim row-major. Ties go to the lowest cluster index; empty
// clusters keep their previous centre.
KMeansResult kmeans(const std::vector<float>& points, int n, int dim, int k, std::uint64_t seed,
                    int iterations = 50);

// [C, N*N, H, W] kernels -> H*W row vectors of length C*N*N.
std::vector<float> kernel_vectors(const Tensor<float>& kernels);

// [3,H,W] colour image of a label map, one fixed colour per label.
Tensor<float> label_image(const std::vector<int>& labels, int height, int width);

}  // namespace gknet
