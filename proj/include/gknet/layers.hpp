#pragma once

#include <map>
#include <string>

#include "gknet/ops.hpp"
#include "gknet/random.hpp"

namespace gknet {

/// Named learnable tensors, iterated in name order.
template <typename T>
class ParameterStore {
 public:
  Var<T> add(const std::string& name, Tensor<T> init) {
    GK_REQUIRE(!params_.count(name), "duplicate parameter " << name);
    Var<T> v = Var<T>::parameter(std::move(init));
    params_.emplace(name, v);
    return v;
  }
  const Var<T>& get(const std::string& name) const {
    auto it = params_.find(name);
    GK_REQUIRE(it != params_.end(), "unknown parameter " << name);
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const std::map<std::string, Var<T>>& all() const { return params_; }
  void zero_grad() {
    for (auto& [_, v] : params_) {
      Var<T> p = v;
      p.zero_grad();
    }
  }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : params_) n += v.value().size();
    return n;
  }

 private:
  std::map<std::string, Var<T>> params_;
};

// Weights ~ U(-sqrt(3/fan_in), sqrt(3/fan_in)): unit variance per input.
template <typename T>
Tensor<T> fan_in_uniform(Shape shape, int fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = std::sqrt(3.0 / fan_in);
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
struct Conv2d {
  Var<T> weight;  // [out, in, k, k]
  Var<T> bias;    // [out]
  int stride = 1;
  int pad = 1;

  Var<T> operator()(const Var<T>& x) const { return ops::conv2d(x, weight, bias, stride, pad); }
  Var<T> mean(const Var<T>& x) const { return ops::conv2d_mean(x, weight, bias, stride, pad); }
  int out_channels() const { return weight.dim(0); }
};

template <typename T>
Conv2d<T> make_conv(ParameterStore<T>& store, const std::string& name, int in, int out, int kernel,
                    int stride, Rng& rng) {
  Conv2d<T> c;
  c.weight = store.add(name + ".weight", fan_in_uniform<T>({out, in, kernel, kernel}, in * kernel * kernel, rng));
  c.bias = store.add(name + ".bias", Tensor<T>({out}));
  c.stride = stride;
  c.pad = kernel / 2;
  return c;
}

template <typename T>
struct Linear {
  Var<T> weight;  // [out, in]
  Var<T> bias;    // [out]

  Var<T> operator()(const Var<T>& x) const { return ops::linear(x, weight, bias); }
};

template <typename T>
Linear<T> make_linear(ParameterStore<T>& store, const std::string& name, int in, int out, Rng& rng) {
  Linear<T> l;
  l.weight = store.add(name + ".weight", fan_in_uniform<T>({out, in}, in, rng));
  l.bias = store.add(name + ".bias", Tensor<T>({out}));
  return l;
}

template <typename T>
struct LayerNorm {
  Var<T> gamma, beta;
  Var<T> operator()(const Var<T>& x) const { return ops::layer_norm_rows(x, gamma, beta); }
};

template <typename T>
LayerNorm<T> make_layer_norm(ParameterStore<T>& store, const std::string& name, int dim) {
  return {store.add(name + ".gamma", Tensor<T>({dim}, T(1))), store.add(name + ".beta", Tensor<T>({dim}))};
}

}  // namespace gknet
