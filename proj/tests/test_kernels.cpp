#include "salm/kernels.hpp"

#include <array>
#include <cstring>
#include <limits>
#include <vector>

#include "doctest.h"
#include "salm/rng.hpp"

using namespace salm;

namespace {

std::vector<double> random_vec(RngStream& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.next_normal();
  return v;
}

}  // namespace

TEST_CASE("serial and parallel matmul drivers are bit-identical") {
  RngStream rng(1);
  for (const auto [m, k, n] :
       {std::array<std::size_t, 3>{33, 17, 29}, std::array<std::size_t, 3>{128, 64, 96}}) {
    const auto a = random_vec(rng, m * k);
    const auto b = random_vec(rng, k * n);
    const auto bt = random_vec(rng, n * k);
    const auto at = random_vec(rng, k * m);
    std::vector<double> s(m * n), p(m * n);

    kernels::serial::matmul_nn(a.data(), b.data(), s.data(), m, k, n);
    kernels::par::matmul_nn(a.data(), b.data(), p.data(), m, k, n);
    CHECK(std::memcmp(s.data(), p.data(), s.size() * sizeof(double)) == 0);

    kernels::serial::matmul_nt(a.data(), bt.data(), s.data(), m, k, n);
    kernels::par::matmul_nt(a.data(), bt.data(), p.data(), m, k, n);
    CHECK(std::memcmp(s.data(), p.data(), s.size() * sizeof(double)) == 0);

    kernels::serial::matmul_tn(at.data(), b.data(), s.data(), m, k, n);
    kernels::par::matmul_tn(at.data(), b.data(), p.data(), m, k, n);
    CHECK(std::memcmp(s.data(), p.data(), s.size() * sizeof(double)) == 0);
  }
}

TEST_CASE("serial and parallel softmax / layer norm are bit-identical") {
  RngStream rng(2);
  const std::size_t rows = 67, cols = 31;
  const auto x = random_vec(rng, rows * cols);
  std::vector<double> s(rows * cols), p(rows * cols);
  kernels::serial::softmax_rows(x.data(), s.data(), rows, cols);
  kernels::par::softmax_rows(x.data(), p.data(), rows, cols);
  CHECK(std::memcmp(s.data(), p.data(), s.size() * sizeof(double)) == 0);

  const auto sq = random_vec(rng, cols * cols);
  std::vector<double> cs(cols * cols), cp(cols * cols);
  kernels::serial::softmax_rows(sq.data(), cs.data(), cols, cols, true);
  kernels::par::softmax_rows(sq.data(), cp.data(), cols, cols, true);
  CHECK(std::memcmp(cs.data(), cp.data(), cs.size() * sizeof(double)) == 0);

  const auto gain = random_vec(rng, cols);
  const auto bias = random_vec(rng, cols);
  std::vector<double> ms(rows), rs(rows), mp(rows), rp(rows);
  kernels::serial::layer_norm_rows(x.data(), s.data(), gain.data(), bias.data(), rows, cols,
                                   1e-5, ms.data(), rs.data());
  kernels::par::layer_norm_rows(x.data(), p.data(), gain.data(), bias.data(), rows, cols, 1e-5,
                                mp.data(), rp.data());
  CHECK(std::memcmp(s.data(), p.data(), s.size() * sizeof(double)) == 0);
  CHECK(std::memcmp(ms.data(), mp.data(), rows * sizeof(double)) == 0);
}

TEST_CASE("matmul against small hand cases") {
  // identity times A is A
  const std::vector<double> eye{1, 0, 0, 0, 1, 0, 0, 0, 1};
  const std::vector<double> a{1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<double> out(9);
  kernels::matmul_nn(eye.data(), a.data(), out.data(), 3, 3, 3);
  CHECK(out == a);

  // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
  const std::vector<double> x{1, 2, 3, 4}, y{5, 6, 7, 8};
  std::vector<double> z(4);
  kernels::matmul_nn(x.data(), y.data(), z.data(), 2, 2, 2);
  CHECK(z == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("causal softmax zeroes future positions") {
  RngStream rng(3);
  const std::size_t t = 9;
  const auto x = random_vec(rng, t * t);
  std::vector<double> y(t * t);
  kernels::serial::softmax_rows(x.data(), y.data(), t, t, true);
  for (std::size_t i = 0; i < t; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < t; ++j) {
      if (j > i) CHECK(y[i * t + j] == 0.0);
      sum += y[i * t + j];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("all_finite flags bad values") {
  std::vector<double> good{1.0, -2.0, 0.0};
  CHECK(kernels::all_finite(good.data(), good.size()));
  good.push_back(std::numeric_limits<double>::infinity());
  CHECK(!kernels::all_finite(good.data(), good.size()));
  good.back() = std::nan("");
  CHECK(!kernels::all_finite(good.data(), good.size()));
}
