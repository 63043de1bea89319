// Times the OpenMP kernels against the serial reference implementations on
// desk-sized shapes, and checks that both agree.

#include <omp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>

#include "gknet/kernels.hpp"
#include "gknet/random.hpp"
#include "gknet/reference.hpp"

using namespace gknet;

namespace {

Tensor<float> random_tensor(Shape shape, Rng& rng) {
  Tensor<float> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-1, 1));
  return t;
}

// Median wall time in milliseconds over `repeats` runs after one warm-up.
double time_ms(int repeats, const std::function<void()>& f) {
  f();
  std::vector<double> times;
  for (int i = 0; i < repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    times.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  std::nth_element(times.begin(), times.begin() + times.size() / 2, times.end());
  return times[times.size() / 2];
}

double max_diff(const Tensor<float>& a, const Tensor<float>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, static_cast<double>(std::abs(a[i] - b[i])));
  return m;
}

void row(const char* name, double ref_ms, double par_ms, double diff) {
  std::printf("%-34s %10.3f %10.3f %8.1fx %10.2e\n", name, ref_ms, par_ms, ref_ms / par_ms, diff);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gknet kernel benchmark: OpenMP kernels vs serial reference"};
  int repeats = 5;
  int threads = 0;
  app.add_option("--repeats", repeats, "Timed runs per case (median reported)")->capture_default_str();
  app.add_option("--threads", threads, "OpenMP threads (0: runtime default)");
  CLI11_PARSE(app, argc, argv);
  if (threads > 0) omp_set_num_threads(threads);

  std::printf("threads: %d\n", omp_get_max_threads());
  std::printf("%-34s %10s %10s %9s %10s\n", "case", "ref ms", "omp ms", "speedup", "max|diff|");
  Rng rng(2024);

  struct ConvCase {
    const char* name;
    int cin, cout, size, kernel, stride;
  };
  for (const ConvCase& c : {ConvCase{"conv 3x3  16->16  64x64", 16, 16, 64, 3, 1},
                            ConvCase{"conv 3x3  32->64  32x32 s2", 32, 64, 32, 3, 2},
                            ConvCase{"conv 3x3  64->64  16x16", 64, 64, 16, 3, 1},
                            ConvCase{"conv 1x1  64->576 16x16", 64, 576, 16, 1, 1}}) {
    auto x = random_tensor({c.cin, c.size, c.size}, rng);
    auto w = random_tensor({c.cout, c.cin, c.kernel, c.kernel}, rng);
    auto b = random_tensor({c.cout}, rng);
    const int pad = c.kernel / 2;
    Tensor<float> ref;
    const double ref_ms = time_ms(repeats, [&] { ref = reference::conv2d(x, w, &b, c.stride, pad); });
    kernels::ConvGeometry g{c.cin, c.size, c.size, c.cout, c.kernel, c.stride, pad};
    Tensor<float> par({c.cout, g.out_height(), g.out_width()});
    std::vector<float> scratch;
    const double par_ms =
        time_ms(repeats, [&] { kernels::conv2d_forward(x.data(), w.data(), b.data(), g, par.data(), scratch); });
    row(c.name, ref_ms, par_ms, max_diff(ref, par));
  }

  for (int n : {3, 5}) {
    for (const auto [ch, size] : {std::pair{16, 64}, std::pair{64, 16}}) {
      auto f = random_tensor({ch, size, size}, rng);
      auto k = random_tensor({ch, n * n, size, size}, rng);
      Tensor<float> ref, par({ch, size, size});
      const double ref_ms = time_ms(repeats, [&] { ref = reference::kernel_modulate(f, k); });
      const double par_ms = time_ms(
          repeats, [&] { kernels::kernel_modulate_forward(f.data(), k.data(), ch, size, size, n, par.data()); });
      char name[64];
      std::snprintf(name, sizeof name, "modulate n=%d  C=%d  %dx%d", n, ch, size, size);
      row(name, ref_ms, par_ms, max_diff(ref, par));
    }
  }

  for (const auto [ch, size] : {std::pair{32, 32}, std::pair{64, 16}}) {
    auto x = random_tensor({ch, size, size}, rng);
    Tensor<float> ref, par({ch, 2 * size, 2 * size});
    const double ref_ms = time_ms(repeats, [&] { ref = reference::upsample2x(x); });
    const double par_ms = time_ms(repeats, [&] { kernels::upsample2x_forward(x.data(), ch, size, size, par.data()); });
    char name[64];
    std::snprintf(name, sizeof name, "upsample x2  C=%d  %dx%d", ch, size, size);
    row(name, ref_ms, par_ms, max_diff(ref, par));
  }
  return 0;
}
