#include <doctest.h>

#include "../support.hpp"
#include "gknet/errors.hpp"

using namespace gktest;

TEST_SUITE("modulation") {

TEST_CASE("identity and zero kernels") {
  Rng rng(10);
  for (int n : {1, 3, 5}) {
    auto f = random_tensor<float>({3, 6, 5}, rng);
    CHECK(kernel_modulate(f, identity_kernel<float>(3, n, 6, 5)) == f);
    CHECK(kernel_modulate_oracle(f, identity_kernel<float>(3, n, 6, 5)) == f);
    CHECK(kernel_modulate(f, Tensor<float>({3, n * n, 6, 5})) == Tensor<float>({3, 6, 5}));
    CHECK(kernel_modulate_oracle(f, Tensor<float>({3, n * n, 6, 5})) == Tensor<float>({3, 6, 5}));
  }
}

TEST_CASE("ramp input with a seeded kernel matches explicit loops") {
  Tensor<double> f({1, 4, 4});
  for (int i = 0; i < 16; ++i) f[i] = i;
  Rng rng(11);
  auto k = random_tensor<double>({1, 9, 4, 4}, rng);
  auto expect = modulate_loops(f, k);
  CHECK(max_abs_diff(kernel_modulate(f, k), expect) <= 1e-6);
  CHECK(max_abs_diff(kernel_modulate_oracle(f, k), expect) <= 1e-6);
}

TEST_CASE("offset linearisation is row-major over p - q") {
  // Kernel selecting offset (dy,dx) = (1,0) copies F from the pixel above.
  Tensor<double> f({1, 3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor<double> k({1, 9, 3, 3});
  for (int p = 0; p < 9; ++p) k[(2 * 3 + 1) * 9 + p] = 1.0;  // (dy+1)*3+(dx+1) = 7
  auto out = kernel_modulate(f, k);
  CHECK(out.at(0, 0, 1) == 0.0);
  CHECK(out.at(0, 1, 1) == 2.0);
  CHECK(out.at(0, 2, 2) == 6.0);
}

TEST_CASE("constant input scales by the kernel sum at interior pixels") {
  Rng rng(12);
  Tensor<double> f({1, 5, 5}, 2.5);
  auto k = random_tensor<double>({1, 9, 5, 5}, rng);
  auto out = kernel_modulate(f, k);
  double s = 0;
  for (int t = 0; t < 9; ++t) s += k.at(0, t, 2, 3);
  CHECK(out.at(0, 2, 3) == doctest::Approx(2.5 * s).epsilon(1e-12));
}

TEST_CASE("agrees with the oracle and explicit loops on random cases") {
  Rng rng(13);
  for (int i = 0; i < 50; ++i) {
    const int c = rng.uniform_int(1, 4), h = rng.uniform_int(1, 8), w = rng.uniform_int(1, 8);
    const int n = 2 * rng.uniform_int(0, 2) + 1;
    auto f = random_tensor<float>({c, h, w}, rng);
    auto k = random_tensor<float>({c, n * n, h, w}, rng);
    auto fast = kernel_modulate(f, k);
    CHECK(max_abs_diff(fast, kernel_modulate_oracle(f, k)) <= 1e-6f);
    CHECK(max_abs_diff(fast, modulate_loops(f, k)) <= 1e-6f);
  }
}

TEST_CASE("rejects even kernels and shape mismatches") {
  Tensor<float> f({2, 4, 4});
  CHECK_THROWS_AS(kernel_modulate(f, Tensor<float>({2, 4, 4, 4})), ContractViolation);
  CHECK_THROWS_AS(kernel_modulate(f, Tensor<float>({2, 8, 4, 4})), ContractViolation);
  CHECK_THROWS_AS(kernel_modulate(f, Tensor<float>({3, 9, 4, 4})), ContractViolation);
  CHECK_THROWS_AS(kernel_modulate(f, Tensor<float>({2, 9, 4, 5})), ContractViolation);
  CHECK_THROWS_AS(kernel_modulate_oracle(f, Tensor<float>({2, 4, 4, 4})), ContractViolation);
}

TEST_CASE("linear in F and in K") {
  Rng rng(14);
  auto f1 = random_tensor<double>({2, 5, 6}, rng), f2 = random_tensor<double>({2, 5, 6}, rng);
  auto k1 = random_tensor<double>({2, 9, 5, 6}, rng), k2 = random_tensor<double>({2, 9, 5, 6}, rng);
  const double a = 0.7, b = -1.3;
  Tensor<double> fm(f1.shape()), km(k1.shape());
  for (std::size_t i = 0; i < fm.size(); ++i) fm[i] = a * f1[i] + b * f2[i];
  for (std::size_t i = 0; i < km.size(); ++i) km[i] = a * k1[i] + b * k2[i];
  auto lhs_f = kernel_modulate(fm, k1), o1 = kernel_modulate(f1, k1), o2 = kernel_modulate(f2, k1);
  auto lhs_k = kernel_modulate(f1, km), p2 = kernel_modulate(f1, k2);
  for (std::size_t i = 0; i < lhs_f.size(); ++i) {
    CHECK(std::abs(lhs_f[i] - (a * o1[i] + b * o2[i])) < 1e-5);
    CHECK(std::abs(lhs_k[i] - (a * o1[i] + b * p2[i])) < 1e-5);
  }
}

TEST_CASE("locality: a change at q reaches only its neighbourhood") {
  Rng rng(15);
  for (int n : {1, 3, 5}) {
    auto f = random_tensor<double>({1, 9, 9}, rng);
    auto k = random_tensor<double>({1, n * n, 9, 9}, rng);
    auto base = kernel_modulate(f, k);
    f.at(0, 4, 3) += 1.0;
    auto moved = kernel_modulate(f, k);
    for (int y = 0; y < 9; ++y)
      for (int x = 0; x < 9; ++x) {
        const bool near = std::max(std::abs(y - 4), std::abs(x - 3)) <= n / 2;
        if (!near) CHECK(moved.at(0, y, x) == base.at(0, y, x));
      }
  }
}

TEST_CASE("channels are independent") {
  Rng rng(16);
  auto f = random_tensor<double>({3, 5, 5}, rng);
  auto k = random_tensor<double>({3, 9, 5, 5}, rng);
  auto base = kernel_modulate(f, k);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) f.at(1, y, x) = 0;
  auto out = kernel_modulate(f, k);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 5; ++x) {
        if (c == 1)
          CHECK(out.at(c, y, x) == 0.0);
        else
          CHECK(out.at(c, y, x) == base.at(c, y, x));
      }
}

TEST_CASE("gradients w.r.t. F and K match central differences") {
  Rng rng(17);
  for (int trial = 0; trial < 3; ++trial) {
    auto f = Var<double>::parameter(random_tensor<double>({1, 5, 5}, rng));
    auto k = Var<double>::parameter(random_tensor<double>({1, 9, 5, 5}, rng));
    auto r = grad_check([&] { return probe(kernel_modulate(f, k), 99 + trial); }, {f, k});
    CHECK(r.rel_error < 1e-4);
    CHECK(r.analytic_norm > 0);
  }
}

}
