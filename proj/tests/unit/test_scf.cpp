#include <doctest.h>

#include "../support.hpp"
#include "gknet/errors.hpp"
#include "gknet/reference.hpp"

using namespace gktest;

namespace {

struct Fixture {
  ParameterStore<double> store;
  Rng rng{21};
  ScfParams<double> p;
  Fixture(int prev, int c, int groups, bool selective = true) {
    p = make_scf(store, "scf", prev, c, groups, selective, rng);
  }
};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_SUITE("scf") {

TEST_CASE("attention vector: zero input gives zero, length is C for any input width") {
  Fixture fx(6, 8, 4);
  auto zero_e = Var<double>::constant(Tensor<double>({8, 4, 4}));
  auto zero_p = Var<double>::constant(Tensor<double>({6, 2, 2}));
  CHECK(attention_vector(zero_e, fx.p.attend_e).value() == Tensor<double>({8}));
  CHECK(attention_vector(zero_p, fx.p.attend_prev).value().shape() == Shape{8});
}

TEST_CASE("attention vector equals MLP(GAP(conv3x3(F)))") {
  Fixture fx(6, 8, 4);
  Rng rng(22);
  auto f = Var<double>::constant(random_tensor<double>({8, 5, 4}, rng));
  const auto& br = fx.p.attend_e;
  auto pooled = ops::global_avg_pool(ops::conv2d(f, br.conv.weight, br.conv.bias, 1, 1)).value();
  const auto& w1 = br.hidden.weight.value();
  const auto& w2 = br.out.weight.value();
  std::vector<double> hidden(8);
  for (int i = 0; i < 8; ++i) {
    double s = br.hidden.bias.value()[i];
    for (int j = 0; j < 8; ++j) s += w1.at(i, j) * pooled[j];
    hidden[i] = std::max(0.0, s);
  }
  auto got = attention_vector(f, br).value();
  for (int i = 0; i < 8; ++i) {
    double s = br.out.bias.value()[i];
    for (int j = 0; j < 8; ++j) s += w2.at(i, j) * hidden[j];
    CHECK(got[i] == doctest::Approx(s).epsilon(1e-12));
  }
}

TEST_CASE("attention vector of a constant feature is invariant to pixel permutation") {
  Fixture fx(6, 8, 4);
  Tensor<double> f({8, 4, 4});
  for (int c = 0; c < 8; ++c)
    for (int i = 0; i < 16; ++i) f[c * 16 + i] = 0.1 * c - 0.3;
  Tensor<double> g(f.shape());
  for (int c = 0; c < 8; ++c)
    for (int i = 0; i < 16; ++i) g[c * 16 + i] = f[c * 16 + (i * 5) % 16];
  CHECK(attention_vector(Var<double>::constant(f), fx.p.attend_e).value() ==
        attention_vector(Var<double>::constant(g), fx.p.attend_e).value());
}

TEST_CASE("relation examples") {
  auto c = [](Shape s, std::vector<double> v) { return Var<double>::constant(Tensor<double>(std::move(s), std::move(v))); };
  auto a = relation(c({2, 2}, {1, 2, 3, 4}), c({2, 2}, {1, 0, 0, 1})).value();
  CHECK(a == Tensor<double>({2, 2}, std::vector<double>{1, 2, 3, 4}));
  // Rows e_0, e_1 against rows e_1, e_0: A[i][j] = [row_i == row'_j].
  auto b = relation(c({2, 2}, {1, 0, 0, 1}), c({2, 2}, {0, 1, 1, 0})).value();
  CHECK(b == Tensor<double>({2, 2}, std::vector<double>{0, 1, 1, 0}));

  Rng rng(23);
  auto p = random_tensor<double>({4, 8}, rng), e = random_tensor<double>({4, 8}, rng);
  auto r = relation(Var<double>::constant(p), Var<double>::constant(e)).value();
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double s = 0;
      for (int k = 0; k < 8; ++k) s += p.at(i, k) * e.at(j, k);
      CHECK(r.at(i, j) == doctest::Approx(s).epsilon(1e-12));
    }
  CHECK_THROWS_AS(relation(Var<double>::constant(p), Var<double>::constant(Tensor<double>({8, 4}))),
                  ContractViolation);
}

TEST_CASE("selective weights") {
  Fixture fx(8, 8, 4);
  Rng rng(24);
  auto alpha = random_tensor<double>({8}, rng, -3, 3);
  auto abar = random_tensor<double>({4}, rng);
  auto zero_b = Var<double>::constant(Tensor<double>({1}));
  auto s0 = selective_weights(Var<double>::constant(alpha), Var<double>::constant(abar), zero_b, fx.p.select_e).value();
  for (int i = 0; i < 8; ++i) CHECK(s0[i] == sigmoid(alpha[i]));
  auto half = selective_weights(Var<double>::constant(Tensor<double>({8})), Var<double>::constant(abar), zero_b,
                                fx.p.select_e)
                  .value();
  for (int i = 0; i < 8; ++i) CHECK(half[i] == 0.5);

  auto one_b = Var<double>::constant(Tensor<double>({1}, 1.0));
  auto s1 = selective_weights(Var<double>::constant(alpha), Var<double>::constant(abar), one_b, fx.p.select_e).value();
  const auto& w = fx.p.select_e.weight.value();
  for (int i = 0; i < 8; ++i) {
    double fc = fx.p.select_e.bias.value()[i];
    for (int j = 0; j < 4; ++j) fc += w.at(i, j) * abar[j];
    CHECK(s1[i] == doctest::Approx(sigmoid(alpha[i] + fc)).epsilon(1e-12));
  }
}

TEST_CASE("selective factors average a two-channel conv over A along the row index") {
  Fixture fx(8, 8, 4);
  Rng rng(25);
  auto a = random_tensor<double>({4, 4}, rng);
  auto [prev, e] = selective_factors(Var<double>::constant(a), fx.p.relation_conv);
  auto maps = reference::conv2d(a.reshaped({1, 4, 4}), fx.p.relation_conv.weight.value(),
                                &fx.p.relation_conv.bias.value(), 1, 1);
  for (int i = 0; i < 4; ++i) {
    double sp = 0, se = 0;
    for (int j = 0; j < 4; ++j) {
      sp += maps.at(0, j, i);
      se += maps.at(1, j, i);
    }
    CHECK(prev.value()[i] == doctest::Approx(sp / 4).epsilon(1e-12));
    CHECK(e.value()[i] == doctest::Approx(se / 4).epsilon(1e-12));
  }
}

TEST_CASE("fused output: shape, branch decomposition and weight range") {
  Fixture fx(16, 8, 4);
  Var<double> b = fx.p.b;
  b.mutable_value()[0] = 0.8;
  Rng rng(26);
  auto fe = Var<double>::constant(random_tensor<double>({8, 6, 6}, rng));
  auto fp = Var<double>::constant(random_tensor<double>({16, 3, 3}, rng));
  ScfTrace<double> tr;
  auto out = scf_fuse(fe, fp, fx.p, &tr).value();
  CHECK(out.shape() == Shape{8, 6, 6});
  for (double s : tr.weight_e.values()) CHECK((s > 0 && s < 1));
  for (double s : tr.weight_prev.values()) CHECK((s > 0 && s < 1));
  CHECK(tr.relation.shape() == Shape{4, 4});
  CHECK(tr.abar_e.shape() == Shape{4});

  auto shallow = ops::scale_channels(fx.p.proj_e(fe), Var<double>::constant(tr.weight_e)).value();
  auto deep = ops::upsample2x(ops::scale_channels(fx.p.proj_prev(fp), Var<double>::constant(tr.weight_prev))).value();
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(shallow[i] + deep[i]).epsilon(1e-12));
}

TEST_CASE("saturated negative attention switches both branches off") {
  Fixture fx(8, 8, 4);
  for (auto* br : {&fx.p.attend_e, &fx.p.attend_prev}) {
    Var<double> bias = br->out.bias;
    bias.mutable_value().fill(-60.0);
  }
  Rng rng(27);
  auto out = scf_fuse(Var<double>::constant(random_tensor<double>({8, 4, 4}, rng, -0.1, 0.1)),
                      Var<double>::constant(random_tensor<double>({8, 2, 2}, rng, -0.1, 0.1)), fx.p)
                 .value();
  for (double v : out.values()) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("with b = 0 the relation path has no influence") {
  Fixture fx(8, 8, 4);
  Rng rng(28);
  auto fe = Var<double>::constant(random_tensor<double>({8, 4, 4}, rng));
  auto fp = Var<double>::constant(random_tensor<double>({8, 2, 2}, rng));
  auto before = scf_fuse(fe, fp, fx.p).value();
  for (const char* name : {"scf.relation.weight", "scf.select_e.weight", "scf.select_prev.bias"}) {
    Var<double> v = fx.store.get(name);
    for (auto& x : v.mutable_value().values()) x += rng.uniform(-1, 1);
  }
  CHECK(scf_fuse(fe, fp, fx.p).value() == before);
}

TEST_CASE("same-resolution fusion for the deepest block and shape errors") {
  Fixture fx(8, 8, 4);
  Rng rng(29);
  auto fe = Var<double>::constant(random_tensor<double>({8, 4, 4}, rng));
  CHECK(scf_fuse(fe, Var<double>::constant(random_tensor<double>({8, 4, 4}, rng)), fx.p).value().shape() ==
        Shape{8, 4, 4});
  CHECK_THROWS_AS(scf_fuse(fe, Var<double>::constant(Tensor<double>({8, 3, 3})), fx.p), ContractViolation);
  CHECK_THROWS_AS(scf_fuse(fe, Var<double>::constant(Tensor<double>({4, 2, 2})), fx.p), ContractViolation);
  ParameterStore<double> s;
  Rng r(1);
  CHECK_THROWS_AS(make_scf(s, "x", 8, 12, 8, true, r), ConfigError);
}

TEST_CASE("plain-sum ablation") {
  Fixture fx(8, 8, 4, false);
  Rng rng(30);
  auto fe = Var<double>::constant(random_tensor<double>({8, 4, 4}, rng));
  auto fp = Var<double>::constant(random_tensor<double>({8, 2, 2}, rng));
  auto expect = ops::add(fx.p.proj_e(fe), ops::upsample2x(fx.p.proj_prev(fp))).value();
  CHECK(scf_fuse(fe, fp, fx.p).value() == expect);
  CHECK_FALSE(fx.store.contains("scf.b"));
}

TEST_CASE("gradient check on a 4-channel 4x4 / 2x2 instance") {
  Fixture fx(4, 4, 2);
  Var<double> b = fx.p.b;
  b.mutable_value()[0] = 0.5;
  Rng rng(31);
  auto fe = Var<double>::parameter(random_tensor<double>({4, 4, 4}, rng));
  auto fp = Var<double>::parameter(random_tensor<double>({4, 2, 2}, rng));
  std::vector<Var<double>> leaves{fe, fp};
  for (const auto& [_, v] : fx.store.all()) leaves.push_back(v);
  auto r = grad_check([&] { return probe(scf_fuse(fe, fp, fx.p), 7); }, leaves);
  CHECK(r.rel_error < 1e-3);
  CHECK(r.checked > 100);
}

}
