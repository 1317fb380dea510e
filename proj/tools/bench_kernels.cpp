// Benchmarks the serial kernels against the OpenMP ones and reports speedup.
// Build target `bench_kernels`; not part of the test suite.

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "headsmith/kernels.hpp"
#include "headsmith/rng.hpp"

using namespace headsmith;

namespace {

double time_best_of(int reps, const std::function<void()>& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (s < best) best = s;
  }
  return best;
}

std::vector<double> random_vec(std::size_t n, SplitMix64& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

void report(const char* name, double serial_s, double openmp_s) {
  std::printf("%-18s %10.3f ms %10.3f ms %8.2fx\n", name, serial_s * 1e3, openmp_s * 1e3,
              serial_s / openmp_s);
}

}  // namespace

int main() {
  SplitMix64 rng(42);
  std::printf("threads available: %d\n", kernels::thread_count());
  std::printf("%-18s %13s %13s %9s\n", "kernel", "serial", "openmp", "speedup");

  {
    const std::size_t batch = 256, in = 1024, out = 1024;
    auto x = random_vec(batch * in, rng);
    auto w = random_vec(out * in, rng);
    auto b = random_vec(out, rng);
    std::vector<double> y(batch * out);
    const double s = time_best_of(5, [&] {
      kernels::serial::dense_forward(x.data(), w.data(), b.data(), y.data(), batch, in, out);
    });
    const double p = time_best_of(5, [&] {
      kernels::openmp::dense_forward(x.data(), w.data(), b.data(), y.data(), batch, in, out);
    });
    report("dense_forward", s, p);
  }

  {
    const std::size_t rows = 4096, cols = 4096;
    auto x = random_vec(rows * cols, rng);
    std::vector<double> mean(cols), var(cols);
    const double s = time_best_of(5, [&] {
      kernels::serial::column_mean_var(x.data(), rows, cols, mean.data(), var.data());
    });
    const double p = time_best_of(5, [&] {
      kernels::openmp::column_mean_var(x.data(), rows, cols, mean.data(), var.data());
    });
    report("column_mean_var", s, p);
  }

  {
    const std::size_t m = 1024, n = 1024, k = 9;
    auto img = random_vec(m * n, rng);
    auto ker = random_vec(k * k, rng);
    std::vector<double> out((m - k + 1) * (n - k + 1));
    const double s = time_best_of(5, [&] {
      kernels::serial::convolve2d_valid(img.data(), m, n, ker.data(), k, k, out.data());
    });
    const double p = time_best_of(5, [&] {
      kernels::openmp::convolve2d_valid(img.data(), m, n, ker.data(), k, k, out.data());
    });
    report("convolve2d_valid", s, p);
  }

  return 0;
}
