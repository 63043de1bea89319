#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "gknet/model.hpp"
#include "gknet/random.hpp"

namespace gktest {

using namespace gknet;

template <typename T = double>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// Scalar probe of a tensor-valued function: sum(w * out) with fixed random w.
inline Var<double> probe(const Var<double>& out, std::uint64_t seed) {
  Rng rng(seed);
  return ops::sum(ops::mul(out, Var<double>::constant(random_tensor(out.shape(), rng))));
}

struct GradCheck {
  double rel_error = 0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double analytic_norm = 0;
  std::size_t checked = 0;
};

// Compares backward() of loss() against central differences (step h) for the
// given leaves. `stride` > 1 checks only every stride-th entry of each leaf.
inline GradCheck grad_check(const std::function<Var<double>()>& loss, std::vector<Var<double>> leaves,
                            double h = 1e-4, std::size_t stride = 1, std::size_t offset = 0) {
  for (auto& v : leaves) v.zero_grad();
  Var<double> l = loss();
  backward(l);
  double diff2 = 0, a2 = 0, n2 = 0;
  GradCheck r;
  for (auto& leaf : leaves) {
    const Tensor<double> analytic = leaf.grad().size() ? leaf.grad() : Tensor<double>(leaf.shape());
    Tensor<double>& value = leaf.mutable_value();
    for (std::size_t i = offset % stride; i < value.size(); i += stride) {
      const double saved = value[i];
      double fp, fm;
      {
        NoGradGuard g;
        value[i] = saved + h;
        fp = loss().value()[0];
        value[i] = saved - h;
        fm = loss().value()[0];
      }
      value[i] = saved;
      const double numeric = (fp - fm) / (2 * h);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
      ++r.checked;
    }
  }
  const double scale = std::max(std::sqrt(a2), std::sqrt(n2));
  r.rel_error = scale > 0 ? std::sqrt(diff2) / scale : 0.0;
  r.analytic_norm = std::sqrt(a2);
  return r;
}

// Explicit triple loop for out[c,p] = sum_q K[c, idx(p-q), p] * F_pad[c,q].
template <typename T>
Tensor<T> modulate_loops(const Tensor<T>& f, const Tensor<T>& k) {
  const int c = f.dim(0), h = f.dim(1), w = f.dim(2);
  const int n = static_cast<int>(std::lround(std::sqrt(k.dim(1))));
  const int r = n / 2;
  Tensor<T> out(f.shape());
  for (int ch = 0; ch < c; ++ch)
    for (int py = 0; py < h; ++py)
      for (int px = 0; px < w; ++px) {
        double s = 0;
        for (int qy = py - r; qy <= py + r; ++qy)
          for (int qx = px - r; qx <= px + r; ++qx) {
            const double fv = (qy < 0 || qy >= h || qx < 0 || qx >= w) ? 0.0 : f.at(ch, qy, qx);
            const int dy = py - qy, dx = px - qx;
            s += k.at(ch, (dy + r) * n + (dx + r), py, px) * fv;
          }
        out.at(ch, py, px) = static_cast<T>(s);
      }
  return out;
}

// Small config for fast end-to-end checks.
inline NetworkConfig tiny_config(int depth = 2, int resolution = 16) {
  NetworkConfig c;
  c.depth = depth;
  c.base_channels = 8;
  c.resolution = resolution;
  c.scf_groups = 4;
  c.modulation_levels.clear();
  for (int l = 1; l <= depth; ++l) c.modulation_levels.push_back(l);
  c.transformer.layers = 1;
  c.transformer.heads = 2;
  return c;
}

}  // namespace gktest
