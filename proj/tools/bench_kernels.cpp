#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "sigseg/common.hpp"
#include "sigseg/kernels.hpp"

// Times the serial reference kernels against the OpenMP production kernels
// on model-realistic shapes and reports the largest elementwise deviation.

using namespace sigseg;
using namespace sigseg::kernels;

namespace {

std::vector<float> randv(std::size_t n, Rng& rng) {
  std::vector<float> v(n);
  for (auto& x : v) x = rng.uniform(-1.f, 1.f);
  return v;
}

double time_of(const std::function<void()>& fn, int reps) {
  fn();  // warm up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; i++) fn();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
             .count() /
         reps;
}

float max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  float m = 0.f;
  for (std::size_t i = 0; i < a.size(); i++)
    m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

void row(const char* name, double flops, double t_ref, double t_par,
         float diff) {
  std::printf("%-22s %8.2f ms %8.2f ms  x%-5.2f %7.2f GF/s  max|d|=%g\n", name,
              t_ref * 1e3, t_par * 1e3, t_ref / t_par, flops / t_par / 1e9,
              diff);
}

}  // namespace

int main(int argc, char** argv) {
  int threads = 0;  // 0: leave OpenMP default
  int reps = 20;
  for (int i = 1; i < argc; i++) {
    if (!std::strcmp(argv[i], "--threads") && i + 1 < argc)
      threads = std::atoi(argv[++i]);
    else if (!std::strcmp(argv[i], "--reps") && i + 1 < argc)
      reps = std::atoi(argv[++i]);
    else {
      std::fprintf(stderr, "usage: %s [--threads N] [--reps N]\n", argv[0]);
      return 1;
    }
  }
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
  std::printf("openmp threads: %d\n", threads > 0 ? threads : omp_get_max_threads());
#else
  std::printf("built without OpenMP: both columns run serially\n");
#endif

  Rng rng(42);

  {  // conv2d forward, 16->16 @ 32x32, batch 4
    const ConvDims d = conv_dims({4, 16, 32, 32}, {16, 16, 3, 3}, 1, 1);
    auto in = randv(static_cast<std::size_t>(d.n) * d.cin * d.h * d.w, rng);
    auto w = randv(static_cast<std::size_t>(d.cout) * d.cin * 9, rng);
    auto b = randv(d.cout, rng);
    std::vector<float> o1(static_cast<std::size_t>(d.n) * d.cout * d.hout * d.wout);
    std::vector<float> o2(o1.size());
    const double flops = 2.0 * d.n * d.cout * d.cin * 9 * d.hout * d.wout;
    const double tr = time_of([&] { reference::conv2d_forward(d, in.data(), w.data(), b.data(), o1.data()); }, reps);
    const double tp = time_of([&] { conv2d_forward(d, in.data(), w.data(), b.data(), o2.data()); }, reps);
    row("conv2d fwd", flops, tr, tp, max_abs_diff(o1, o2));
  }
  {  // conv2d backward (input + weight), same shape
    const ConvDims d = conv_dims({4, 16, 32, 32}, {16, 16, 3, 3}, 1, 1);
    auto gout = randv(static_cast<std::size_t>(d.n) * d.cout * d.hout * d.wout, rng);
    auto in = randv(static_cast<std::size_t>(d.n) * d.cin * d.h * d.w, rng);
    auto w = randv(static_cast<std::size_t>(d.cout) * d.cin * 9, rng);
    std::vector<float> g1(in.size()), g2(in.size());
    std::vector<float> w1(w.size()), w2(w.size());
    const double flops = 2.0 * d.n * d.cout * d.cin * 9 * d.hout * d.wout;
    double tr = time_of([&] {
      std::fill(g1.begin(), g1.end(), 0.f);
      reference::conv2d_backward_input(d, gout.data(), w.data(), g1.data());
    }, reps);
    double tp = time_of([&] {
      std::fill(g2.begin(), g2.end(), 0.f);
      conv2d_backward_input(d, gout.data(), w.data(), g2.data());
    }, reps);
    row("conv2d bwd-input", flops, tr, tp, max_abs_diff(g1, g2));
    tr = time_of([&] {
      std::fill(w1.begin(), w1.end(), 0.f);
      reference::conv2d_backward_weight(d, gout.data(), in.data(), w1.data());
    }, reps);
    tp = time_of([&] {
      std::fill(w2.begin(), w2.end(), 0.f);
      conv2d_backward_weight(d, gout.data(), in.data(), w2.data());
    }, reps);
    row("conv2d bwd-weight", flops, tr, tp, max_abs_diff(w1, w2));
  }
  {  // upconv2d forward 32->16, 16x16 -> 32x32
    const UpconvDims d = upconv_dims({4, 32, 16, 16}, {32, 16, 2, 2}, 2);
    auto in = randv(static_cast<std::size_t>(d.n) * d.cin * d.h * d.w, rng);
    auto w = randv(static_cast<std::size_t>(d.cin) * d.cout * 4, rng);
    std::vector<float> o1(static_cast<std::size_t>(d.n) * d.cout * d.hout * d.wout);
    std::vector<float> o2(o1.size());
    const double flops = 2.0 * d.n * d.cin * d.cout * 4 * d.h * d.w;
    const double tr = time_of([&] { reference::upconv2d_forward(d, in.data(), w.data(), o1.data()); }, reps);
    const double tp = time_of([&] { upconv2d_forward(d, in.data(), w.data(), o2.data()); }, reps);
    row("upconv2d fwd", flops, tr, tp, max_abs_diff(o1, o2));
  }
  {  // max pool 2x2/2 @ 64x64, 8 channels
    const PoolDims d = pool_dims({4, 8, 64, 64}, 2, 2);
    auto in = randv(static_cast<std::size_t>(d.n) * d.c * d.h * d.w, rng);
    std::vector<float> o1(static_cast<std::size_t>(d.n) * d.c * d.hout * d.wout);
    std::vector<float> o2(o1.size());
    std::vector<std::int32_t> a1(o1.size()), a2(o1.size());
    const double flops = static_cast<double>(o1.size()) * 4;
    const double tr = time_of([&] { reference::maxpool_forward(d, in.data(), o1.data(), a1.data()); }, reps);
    const double tp = time_of([&] { maxpool_forward(d, in.data(), o2.data(), a2.data()); }, reps);
    row("maxpool fwd", flops, tr, tp, max_abs_diff(o1, o2));
  }
  {  // batch norm train @ 64x64, 16 channels
    const BnDims d{4, 16, 64, 64};
    auto in = randv(static_cast<std::size_t>(d.n) * d.c * d.h * d.w, rng);
    auto gamma = randv(d.c, rng);
    auto beta = randv(d.c, rng);
    std::vector<float> o1(in.size()), o2(in.size());
    std::vector<float> m1(d.c), r1(d.c), v1(d.c), m2(d.c), r2(d.c), v2(d.c);
    const double flops = static_cast<double>(in.size()) * 5;
    const double tr = time_of([&] {
      reference::batchnorm_forward_train(d, in.data(), gamma.data(), beta.data(),
                                         1e-5f, o1.data(), m1.data(), r1.data(), v1.data());
    }, reps);
    const double tp = time_of([&] {
      batchnorm_forward_train(d, in.data(), gamma.data(), beta.data(), 1e-5f,
                              o2.data(), m2.data(), r2.data(), v2.data());
    }, reps);
    row("batchnorm fwd", flops, tr, tp, max_abs_diff(o1, o2));
  }
  return 0;
}
