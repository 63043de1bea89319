#include "gknet/kernel_modulation.hpp"

#include <cmath>

#include "gknet/kernels.hpp"
#include "gknet/reference.hpp"

namespace gknet {

template <typename T>
int checked_kernel_size(const Shape& feature, const Shape& kernel) {
  GK_REQUIRE(feature.size() == 3, "kernel_modulate: feature must be [C,H,W], got " << to_string(feature));
  GK_REQUIRE(kernel.size() == 4, "kernel_modulate: kernel must be [C,N*N,H,W], got " << to_string(kernel));
  const int taps = kernel[1];
  const int n = static_cast<int>(std::lround(std::sqrt(static_cast<double>(taps))));
  GK_REQUIRE(n >= 1 && n * n == taps, "kernel_modulate: " << taps << " taps is not a square kernel");
  GK_REQUIRE(n % 2 == 1, "kernel_modulate: kernel size " << n << " must be odd");
  GK_REQUIRE(kernel[0] == feature[0] && kernel[2] == feature[1] && kernel[3] == feature[2],
             "kernel_modulate: kernel " << to_string(kernel) << " does not match feature "
                                        << to_string(feature));
  return n;
}

template <typename T>
Tensor<T> kernel_modulate(const Tensor<T>& f, const Tensor<T>& k) {
  const int n = checked_kernel_size<T>(f.shape(), k.shape());
  Tensor<T> out(f.shape());
  kernels::kernel_modulate_forward<T>(f.data(), k.data(), f.dim(0), f.dim(1), f.dim(2), n, out.data());
  return out;
}

template <typename T>
Var<T> kernel_modulate(const Var<T>& f, const Var<T>& k) {
  const int n = checked_kernel_size<T>(f.shape(), k.shape());
  const int c = f.dim(0), h = f.dim(1), w = f.dim(2);
  Tensor<T> out(f.shape());
  kernels::kernel_modulate_forward<T>(f.value().data(), k.value().data(), c, h, w, n, out.data());
  return make_result<T>(std::move(out), {f, k}, [c, h, w, n](Node<T>& self) {
    kernels::kernel_modulate_backward<T>(self.input(0).data(), self.input(1).data(),
                                         self.grad.data(), c, h, w, n, self.input_grad(0),
                                         self.input_grad(1));
  });
}

template <typename T>
Tensor<T> kernel_modulate_oracle(const Tensor<T>& f, const Tensor<T>& k) {
  checked_kernel_size<T>(f.shape(), k.shape());
  return reference::kernel_modulate(f, k);
}

template <typename T>
Tensor<T> identity_kernel(int channels, int n, int height, int width) {
  GK_REQUIRE(n % 2 == 1, "identity_kernel: size " << n << " must be odd");
  Tensor<T> k({channels, n * n, height, width});
  const int center = center_tap(n);
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) k.at(c, center, y, x) = T(1);
  return k;
}

#define GKNET_INSTANTIATE_MODULATION(T)                                             \
  template int checked_kernel_size<T>(const Shape&, const Shape&);                  \
  template Tensor<T> kernel_modulate<T>(const Tensor<T>&, const Tensor<T>&);        \
  template Var<T> kernel_modulate<T>(const Var<T>&, const Var<T>&);                 \
  template Tensor<T> kernel_modulate_oracle<T>(const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> identity_kernel<T>(int, int, int, int);

GKNET_INSTANTIATE_MODULATION(float)
GKNET_INSTANTIATE_MODULATION(double)

}  // namespace gknet
