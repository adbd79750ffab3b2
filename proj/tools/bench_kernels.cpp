// Times the serial reference kernels against the OpenMP versions on shapes
// representative of training (64x64 input, 32..128 channels) and prints a
// table with speedups. Each timing repeats until it has run at least ~0.2 s
// and reports the best per-call time. Outputs of both variants are compared
// exactly; a mismatch aborts, since both orderings sum in the same sequence
// per output element.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "sepad/kernels.hpp"
#include "sepad/rng.hpp"
#include "sepad/tensor.hpp"

using namespace sepad;

namespace {

double time_best(const std::function<void()>& fn) {
  using clock = std::chrono::steady_clock;
  fn();  // warm up
  double best = 1e300;
  double spent = 0.0;
  int reps = 0;
  while (spent < 0.2 || reps < 3) {
    auto t0 = clock::now();
    fn();
    double dt = std::chrono::duration<double>(clock::now() - t0).count();
    best = std::min(best, dt);
    spent += dt;
    ++reps;
  }
  return best;
}

struct Row {
  std::string name;
  double serial = 0.0;
  double parallel = 0.0;
};

std::vector<Row> rows;

void report(const std::string& name, double ser, double par, const Tensor& a, const Tensor& b) {
  for (int64_t i = 0; i < a.numel(); ++i) {
    if (a.data[size_t(i)] != b.data[size_t(i)]) {
      std::fprintf(stderr, "%s: serial and parallel outputs differ at %lld\n", name.c_str(),
                   (long long)i);
      std::exit(1);
    }
  }
  rows.push_back({name, ser, par});
}

void bench_conv(int cin, int cout, int hw, int k, int stride) {
  kern::ConvDims d = kern::conv_dims(cin, hw, hw, cout, k, k, stride, k / 2);
  Rng rng(42);
  Tensor x = Tensor::randn({d.cin, d.h, d.w}, rng);
  Tensor w = Tensor::randn({d.cout, d.cin, d.kh, d.kw}, rng);
  Tensor bias = Tensor::randn({d.cout}, rng);
  Tensor y1({d.cout, d.oh, d.ow}), y2({d.cout, d.oh, d.ow});

  char name[96];
  std::snprintf(name, sizeof(name), "conv %dx%dx%d -> %d (k%d s%d)", cin, hw, hw, cout, k, stride);
  double ser = time_best([&] { kern::conv2d_forward_serial(x.ptr(), w.ptr(), bias.ptr(), d, y1.ptr()); });
  double par = time_best([&] { kern::conv2d_forward_omp(x.ptr(), w.ptr(), bias.ptr(), d, y2.ptr()); });
  report(name, ser, par, y1, y2);

  // both backward kernels accumulate into their outputs (gradient-buffer
  // semantics), so each timed call starts from zeroed arrays
  Tensor g = Tensor::randn({d.cout, d.oh, d.ow}, rng);
  Tensor dx1({d.cin, d.h, d.w}), dx2({d.cin, d.h, d.w});
  std::snprintf(name, sizeof(name), "conv dx %dx%dx%d (k%d s%d)", cin, hw, hw, k, stride);
  ser = time_best([&] {
    std::fill(dx1.data.begin(), dx1.data.end(), 0.0);
    kern::conv2d_backward_input_serial(g.ptr(), w.ptr(), d, dx1.ptr());
  });
  par = time_best([&] {
    std::fill(dx2.data.begin(), dx2.data.end(), 0.0);
    kern::conv2d_backward_input_omp(g.ptr(), w.ptr(), d, dx2.ptr());
  });
  report(name, ser, par, dx1, dx2);

  Tensor dw1({d.cout, d.cin, d.kh, d.kw}), dw2({d.cout, d.cin, d.kh, d.kw});
  Tensor db1({d.cout}), db2({d.cout});
  std::snprintf(name, sizeof(name), "conv dw %dx%dx%d (k%d s%d)", cin, hw, hw, k, stride);
  ser = time_best([&] {
    std::fill(dw1.data.begin(), dw1.data.end(), 0.0);
    std::fill(db1.data.begin(), db1.data.end(), 0.0);
    kern::conv2d_backward_weight_serial(g.ptr(), x.ptr(), d, dw1.ptr(), db1.ptr());
  });
  par = time_best([&] {
    std::fill(dw2.data.begin(), dw2.data.end(), 0.0);
    std::fill(db2.data.begin(), db2.data.end(), 0.0);
    kern::conv2d_backward_weight_omp(g.ptr(), x.ptr(), d, dw2.ptr(), db2.ptr());
  });
  report(name, ser, par, dw1, dw2);
}

void bench_pool(int c, int hw) {
  kern::PoolDims d = kern::pool_dims(c, hw, hw, 2, 2);
  Rng rng(43);
  Tensor x = Tensor::randn({d.c, d.h, d.w}, rng);
  Tensor y1({d.c, d.oh, d.ow}), y2({d.c, d.oh, d.ow});
  char name[96];
  std::snprintf(name, sizeof(name), "avgpool %dx%dx%d", c, hw, hw);
  double ser = time_best([&] { kern::avgpool_forward_serial(x.ptr(), d, y1.ptr()); });
  double par = time_best([&] { kern::avgpool_forward_omp(x.ptr(), d, y2.ptr()); });
  report(name, ser, par, y1, y2);
}

void bench_instnorm(int c, int hw) {
  Rng rng(44);
  Tensor x = Tensor::randn({c, hw, hw}, rng);
  Tensor gamma = Tensor::randn({c}, rng);
  Tensor beta = Tensor::randn({c}, rng);
  Tensor y1({c, hw, hw}), y2({c, hw, hw});
  Tensor mean1({c}), invstd1({c}), mean2({c}), invstd2({c});
  char name[96];
  std::snprintf(name, sizeof(name), "instnorm %dx%dx%d", c, hw, hw);
  double ser = time_best([&] {
    kern::instnorm_forward_serial(x.ptr(), c, hw, hw, gamma.ptr(), beta.ptr(), 1e-5, y1.ptr(),
                                  mean1.ptr(), invstd1.ptr());
  });
  double par = time_best([&] {
    kern::instnorm_forward_omp(x.ptr(), c, hw, hw, gamma.ptr(), beta.ptr(), 1e-5, y2.ptr(),
                               mean2.ptr(), invstd2.ptr());
  });
  report(name, ser, par, y1, y2);
}

void bench_resize(int c, int hw, int out) {
  Rng rng(45);
  Tensor x = Tensor::randn({c, hw, hw}, rng);
  Tensor y1({c, out, out}), y2({c, out, out});
  char name[96];
  std::snprintf(name, sizeof(name), "resize %dx%dx%d -> %d", c, hw, hw, out);
  double ser = time_best([&] { kern::resize_bilinear_forward_serial(x.ptr(), c, hw, hw, out, out, y1.ptr()); });
  double par = time_best([&] { kern::resize_bilinear_forward_omp(x.ptr(), c, hw, hw, out, out, y2.ptr()); });
  report(name, ser, par, y1, y2);
}

}  // namespace

int main() {
  bench_conv(3, 32, 64, 4, 2);
  bench_conv(32, 64, 32, 4, 2);
  bench_conv(64, 64, 16, 3, 1);
  bench_conv(64, 128, 16, 3, 1);
  bench_pool(64, 64);
  bench_instnorm(64, 64);
  bench_resize(64, 16, 64);

  std::printf("%-28s %12s %12s %9s\n", "kernel", "serial (ms)", "openmp (ms)", "speedup");
  for (const Row& r : rows) {
    std::printf("%-28s %12.3f %12.3f %8.2fx\n", r.name.c_str(), r.serial * 1e3, r.parallel * 1e3,
                r.serial / r.parallel);
  }
  return 0;
}
