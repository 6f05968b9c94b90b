// Compares the serial reference kernels against the OpenMP drivers and
// checks that both produce bit-identical results while timing them.
//
// Usage: bench_kernels [reps]

#include <chrono>
#include <cstdio>
#include <cstring>
#include <vector>

#include "salm/kernels.hpp"
#include "salm/rng.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <typename Fn>
double time_best_of(int reps, Fn&& fn) {
  double best = 1e30;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = Clock::now();
    fn();
    best = std::min(best, seconds_since(t0));
  }
  return best;
}

std::vector<float> random_vec(salm::RngStream& rng, std::size_t n) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.next_normal());
  return v;
}

void report(const char* name, double serial_s, double par_s, double flops, bool identical) {
  std::printf("%-18s serial %8.3f ms (%6.2f GF/s)   omp %8.3f ms (%6.2f GF/s)   x%.2f   %s\n",
              name, serial_s * 1e3, flops / serial_s * 1e-9, par_s * 1e3,
              flops / par_s * 1e-9, serial_s / par_s, identical ? "bit-identical" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
  const int reps = argc > 1 ? std::atoi(argv[1]) : 5;
  salm::RngStream rng(7);
  std::printf("threads: %d\n", salm::kernels::max_threads());

  {
    const std::size_t m = 512, k = 512, n = 512;
    const auto a = random_vec(rng, m * k);
    const auto b = random_vec(rng, k * n);
    std::vector<float> c_serial(m * n), c_par(m * n);
    const double serial_s = time_best_of(
        reps, [&] { salm::kernels::serial::matmul_nn(a.data(), b.data(), c_serial.data(), m, k, n); });
    const double par_s = time_best_of(
        reps, [&] { salm::kernels::par::matmul_nn(a.data(), b.data(), c_par.data(), m, k, n); });
    report("matmul_nn 512^3", serial_s, par_s, 2.0 * m * k * n,
           std::memcmp(c_serial.data(), c_par.data(), m * n * sizeof(float)) == 0);
  }
  {
    const std::size_t m = 512, k = 512, n = 512;
    const auto a = random_vec(rng, m * k);
    const auto b = random_vec(rng, n * k);
    std::vector<float> c_serial(m * n), c_par(m * n);
    const double serial_s = time_best_of(
        reps, [&] { salm::kernels::serial::matmul_nt(a.data(), b.data(), c_serial.data(), m, k, n); });
    const double par_s = time_best_of(
        reps, [&] { salm::kernels::par::matmul_nt(a.data(), b.data(), c_par.data(), m, k, n); });
    report("matmul_nt 512^3", serial_s, par_s, 2.0 * m * k * n,
           std::memcmp(c_serial.data(), c_par.data(), m * n * sizeof(float)) == 0);
  }
  {
    const std::size_t rows = 4096, cols = 1024;
    const auto x = random_vec(rng, rows * cols);
    std::vector<float> y_serial(rows * cols), y_par(rows * cols);
    const double serial_s = time_best_of(
        reps, [&] { salm::kernels::serial::softmax_rows(x.data(), y_serial.data(), rows, cols); });
    const double par_s = time_best_of(
        reps, [&] { salm::kernels::par::softmax_rows(x.data(), y_par.data(), rows, cols); });
    report("softmax 4096x1024", serial_s, par_s, 4.0 * rows * cols,
           std::memcmp(y_serial.data(), y_par.data(), rows * cols * sizeof(float)) == 0);
  }
  {
    const std::size_t rows = 4096, cols = 1024;
    const auto x = random_vec(rng, rows * cols);
    std::vector<float> gain(cols, 1.0f), bias(cols, 0.0f);
    std::vector<float> y_serial(rows * cols), y_par(rows * cols);
    std::vector<float> mean(rows), rstd(rows);
    const double serial_s = time_best_of(reps, [&] {
      salm::kernels::serial::layer_norm_rows(x.data(), y_serial.data(), gain.data(), bias.data(),
                                             rows, cols, 1e-5f, mean.data(), rstd.data());
    });
    const double par_s = time_best_of(reps, [&] {
      salm::kernels::par::layer_norm_rows(x.data(), y_par.data(), gain.data(), bias.data(), rows,
                                          cols, 1e-5f, mean.data(), rstd.data());
    });
    report("layernorm 4096x1024", serial_s, par_s, 6.0 * rows * cols,
           std::memcmp(y_serial.data(), y_par.data(), rows * cols * sizeof(float)) == 0);
  }
  return 0;
}
