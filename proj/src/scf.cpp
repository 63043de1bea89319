#include "gknet/scf.hpp"

namespace gknet {

namespace {

template <typename T>
AttentionBranch<T> make_branch(ParameterStore<T>& store, const std::string& prefix, int in,
                               int channels, Rng& rng) {
  AttentionBranch<T> b;
  b.conv = make_conv(store, prefix + ".conv", in, channels, 3, 1, rng);
  b.hidden = make_linear(store, prefix + ".hidden", channels, channels, rng);
  b.out = make_linear(store, prefix + ".out", channels, channels, rng);
  return b;
}

}  // namespace

template <typename T>
ScfParams<T> make_scf(ParameterStore<T>& store, const std::string& prefix, int prev_channels,
                      int channels, int groups, bool selective, Rng& rng) {
  GK_CONFIG_CHECK(groups > 0 && channels % groups == 0,
                  "SCF group count " << groups << " must divide channel count " << channels);
  ScfParams<T> p;
  p.channels = channels;
  p.prev_channels = prev_channels;
  p.groups = groups;
  p.selective = selective;
  if (selective) {
    p.attend_e = make_branch(store, prefix + ".attend_e", channels, channels, rng);
    p.attend_prev = make_branch(store, prefix + ".attend_prev", prev_channels, channels, rng);
    p.relation_conv = make_conv(store, prefix + ".relation", 1, 2, 3, 1, rng);
    p.select_e = make_linear(store, prefix + ".select_e", groups, channels, rng);
    p.select_prev = make_linear(store, prefix + ".select_prev", groups, channels, rng);
    p.b = store.add(prefix + ".b", Tensor<T>({1}));
  }
  p.proj_e = make_conv(store, prefix + ".proj_e", channels, channels, 1, 1, rng);
  p.proj_prev = make_conv(store, prefix + ".proj_prev", prev_channels, channels, 1, 1, rng);
  return p;
}

template <typename T>
Var<T> attention_vector(const Var<T>& feature, const AttentionBranch<T>& branch) {
  // GAP(conv3x3(F)) evaluated without materialising the convolution.
  Var<T> pooled = branch.conv.mean(feature);
  return branch.out(ops::relu(branch.hidden(pooled)));
}

template <typename T>
Var<T> relation(const Var<T>& grouped_prev, const Var<T>& grouped_e) {
  GK_REQUIRE(grouped_prev.shape() == grouped_e.shape() && grouped_prev.value().rank() == 2,
             "relation: grouped attention shapes " << to_string(grouped_prev.shape()) << " and "
                                                   << to_string(grouped_e.shape()));
  return ops::matmul(grouped_prev, grouped_e, false, true);
}

template <typename T>
Var<T> selective_weights(const Var<T>& alpha, const Var<T>& abar, const Var<T>& b,
                         const Linear<T>& fc) {
  return ops::sigmoid(ops::add(alpha, ops::mul_scalar(fc(abar), b)));
}

template <typename T>
std::pair<Var<T>, Var<T>> selective_factors(const Var<T>& relation_map, const Conv2d<T>& conv) {
  const int n = relation_map.dim(0);
  Var<T> maps = conv(ops::reshape(relation_map, {1, n, n}));
  Var<T> prev = ops::mean_rows(ops::reshape(ops::slice_channels(maps, 0, 1), {n, n}));
  Var<T> e = ops::mean_rows(ops::reshape(ops::slice_channels(maps, 1, 1), {n, n}));
  return {prev, e};
}

template <typename T>
Var<T> scf_fuse(const Var<T>& f_e, const Var<T>& f_prev, const ScfParams<T>& params,
                ScfTrace<T>* trace) {
  GK_REQUIRE(f_e.value().rank() == 3 && f_prev.value().rank() == 3, "scf_fuse expects [C,H,W] inputs");
  GK_REQUIRE(f_e.dim(0) == params.channels && f_prev.dim(0) == params.prev_channels,
             "scf_fuse channel mismatch: F_E " << to_string(f_e.shape()) << ", F_prev "
                                               << to_string(f_prev.shape()));
  const bool same = f_prev.dim(1) == f_e.dim(1) && f_prev.dim(2) == f_e.dim(2);
  const bool half = 2 * f_prev.dim(1) == f_e.dim(1) && 2 * f_prev.dim(2) == f_e.dim(2);
  GK_REQUIRE(same || half, "scf_fuse: previous feature " << to_string(f_prev.shape())
                                                         << " must be half the resolution of "
                                                         << to_string(f_e.shape()));

  Var<T> proj_e = params.proj_e(f_e);
  Var<T> proj_prev = params.proj_prev(f_prev);
  if (!params.selective) {
    return ops::add(proj_e, same ? proj_prev : ops::upsample2x(proj_prev));
  }

  const int c = params.channels, n = params.groups, m = c / n;
  Var<T> alpha_e = attention_vector(f_e, params.attend_e);
  Var<T> alpha_prev = attention_vector(f_prev, params.attend_prev);
  Var<T> a = relation(ops::reshape(alpha_prev, {n, m}), ops::reshape(alpha_e, {n, m}));
  auto [abar_prev, abar_e] = selective_factors(a, params.relation_conv);
  Var<T> s_e = selective_weights(alpha_e, abar_e, params.b, params.select_e);
  Var<T> s_prev = selective_weights(alpha_prev, abar_prev, params.b, params.select_prev);

  if (trace) {
    trace->alpha_e = alpha_e.value();
    trace->alpha_prev = alpha_prev.value();
    trace->relation = a.value();
    trace->abar_e = abar_e.value();
    trace->abar_prev = abar_prev.value();
    trace->weight_e = s_e.value();
    trace->weight_prev = s_prev.value();
  }

  Var<T> deep = ops::scale_channels(proj_prev, s_prev);
  return ops::add(ops::scale_channels(proj_e, s_e), same ? deep : ops::upsample2x(deep));
}

#define GKNET_INSTANTIATE_SCF(T)                                                                 \
  template ScfParams<T> make_scf<T>(ParameterStore<T>&, const std::string&, int, int, int, bool, \
                                    Rng&);                                                       \
  template Var<T> attention_vector<T>(const Var<T>&, const AttentionBranch<T>&);                 \
  template Var<T> relation<T>(const Var<T>&, const Var<T>&);                                     \
  template Var<T> selective_weights<T>(const Var<T>&, const Var<T>&, const Var<T>&,              \
                                       const Linear<T>&);                                        \
  template std::pair<Var<T>, Var<T>> selective_factors<T>(const Var<T>&, const Conv2d<T>&);      \
  template Var<T> scf_fuse<T>(const Var<T>&, const Var<T>&, const ScfParams<T>&, ScfTrace<T>*);

GKNET_INSTANTIATE_SCF(float)
GKNET_INSTANTIATE_SCF(double)

}  // namespace gknet
