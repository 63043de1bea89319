#include <doctest.h>

#include <set>

#include "gknet/errors.hpp"
#include "gknet/kmeans.hpp"
#include "gknet/random.hpp"

using namespace gknet;

TEST_SUITE("kmeans") {

TEST_CASE("k = 1 gives a single label and the mean as centre") {
  std::vector<float> pts{0, 0, 2, 0, 0, 4, 2, 4};
  auto r = kmeans(pts, 4, 2, 1, 1);
  for (int l : r.labels) CHECK(l == 0);
  CHECK(r.centers[0][0] == doctest::Approx(1.0));
  CHECK(r.centers[0][1] == doctest::Approx(2.0));
  CHECK(r.occupied == 1);
}

TEST_CASE("identical points occupy one cluster whatever k is") {
  std::vector<float> pts(20 * 3, 0.25f);
  auto r = kmeans(pts, 20, 3, 4, 2);
  CHECK(r.occupied == 1);
  for (int l : r.labels) CHECK(l == r.labels[0]);
}

TEST_CASE("planted clusters are recovered") {
  Rng rng(60);
  const double centres[3][2] = {{0, 0}, {10, 0}, {0, 10}};
  std::vector<float> pts;
  std::vector<int> truth;
  for (int i = 0; i < 90; ++i) {
    const int c = i % 3;
    truth.push_back(c);
    pts.push_back(static_cast<float>(centres[c][0] + rng.uniform(-1, 1)));
    pts.push_back(static_cast<float>(centres[c][1] + rng.uniform(-1, 1)));
  }
  auto r = kmeans(pts, 90, 2, 3, 7);
  CHECK(r.occupied == 3);
  // Same partition up to relabelling.
  std::set<std::pair<int, int>> pairs;
  for (int i = 0; i < 90; ++i) pairs.insert({truth[i], r.labels[i]});
  CHECK(pairs.size() == 3);
  CHECK(kmeans(pts, 90, 2, 3, 7).labels == r.labels);
}

TEST_CASE("invalid k is a configuration error") {
  std::vector<float> pts{0, 1};
  CHECK_THROWS_AS(kmeans(pts, 2, 1, 0, 0), ConfigError);
}

TEST_CASE("kernel vectors gather every channel and tap of a pixel") {
  Tensor<float> k({2, 4, 1, 3});
  for (std::size_t i = 0; i < k.size(); ++i) k[i] = static_cast<float>(i);
  auto v = kernel_vectors(k);
  REQUIRE(v.size() == 3 * 8);
  // pixel 1, channel 1, tap 2 -> k[(1*4+2)*3+1]
  CHECK(v[1 * 8 + 1 * 4 + 2] == k[(1 * 4 + 2) * 3 + 1]);
}

TEST_CASE("label images use distinct colours per label") {
  std::vector<int> labels{0, 1, 2, 13, 0, 1};
  auto img = label_image(labels, 2, 3);
  CHECK(img.shape() == Shape{3, 2, 3});
  auto colour = [&](int p) { return std::array<float, 3>{img[p], img[6 + p], img[12 + p]}; };
  CHECK(colour(0) == colour(4));
  CHECK(colour(0) != colour(1));
  CHECK(colour(2) != colour(3));
}

}
