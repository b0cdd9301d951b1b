#include <doctest.h>

#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "msmoe/mmd.hpp"
#include "msmoe/numerics.hpp"
#include "msmoe/rng.hpp"

using namespace msmoe;

namespace {

DenseMatrix random_rows(std::size_t n, std::size_t d, Rng& rng, double shift = 0.0) {
  DenseMatrix m(n, d);
  for (auto& x : m.data) x = rng.gaussian() + shift;
  return m;
}

}  // namespace

TEST_CASE("parallel mmd agrees with the naive reference") {
  Rng rng(61);
  KernelBank bank = default_kernel_bank();
  for (int trial = 0; trial < 100; ++trial) {
    std::size_t n = 2 + rng.uniform_index(8);
    std::size_t m = 2 + rng.uniform_index(8);
    std::size_t d = 1 + rng.uniform_index(5);
    DenseMatrix a = random_rows(n, d, rng);
    DenseMatrix b = random_rows(m, d, rng, 0.5);
    double fast = mmd_squared(a, b, bank);
    double slow = reference::mmd_squared(a, b, bank);
    CHECK(fast == doctest::Approx(slow).epsilon(1e-10));
  }
}

TEST_CASE("mmd is non-negative and zero on identical samples") {
  Rng rng(62);
  KernelBank bank = default_kernel_bank();
  for (int trial = 0; trial < 30; ++trial) {
    DenseMatrix a = random_rows(4 + rng.uniform_index(6), 3, rng);
    DenseMatrix b = random_rows(4 + rng.uniform_index(6), 3, rng, 1.0);
    CHECK(mmd_squared(a, b, bank) >= -1e-12);
    CHECK(mmd_squared(a, a, bank) == doctest::Approx(0.0).epsilon(1e-10));
  }
}

TEST_CASE("mmd grows with separation and tops out at the kernel count") {
  Rng rng(63);
  KernelBank bank = default_kernel_bank();
  DenseMatrix base = random_rows(12, 4, rng);
  double prev = 0.0;
  for (double shift : {0.5, 2.0, 8.0}) {
    DenseMatrix moved = base;
    for (std::size_t i = 0; i < moved.rows; ++i) moved(i, 0) += shift;
    double v = mmd_squared(base, moved, bank);
    CHECK(v > prev);
    prev = v;
  }

  // Two tight clouds pushed astronomically far apart: cross terms vanish
  // and each self term approaches the full bank value of 19, so the
  // squared discrepancy approaches 2 * 19 = 38.
  DenseMatrix far_a(6, 2), far_b(6, 2);
  for (std::size_t i = 0; i < 6; ++i) {
    far_a(i, 0) = 1e-9 * static_cast<double>(i);
    far_b(i, 0) = 1e8 + 1e-9 * static_cast<double>(i);
  }
  CHECK(mmd_squared(far_a, far_b, bank) == doctest::Approx(38.0).epsilon(1e-6));
}

TEST_CASE("mmd rejects shape mismatches and empty samples") {
  KernelBank bank({1.0});
  DenseMatrix a(2, 3), b(2, 4), empty(0, 3);
  CHECK_THROWS_AS((void)mmd_squared(a, b, bank), std::invalid_argument);
  CHECK_THROWS_AS((void)mmd_squared(a, empty, bank), std::invalid_argument);
}

TEST_CASE("mmd gradient matches finite differences") {
  Rng rng(64);
  // Moderate bandwidths keep the finite-difference surface well scaled.
  KernelBank bank({0.5, 2.0, 10.0});
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t n = 3, m = 4, d = 3;
    DenseMatrix a = random_rows(n, d, rng);
    DenseMatrix b = random_rows(m, d, rng, 0.7);

    DenseMatrix ga(n, d), gb(m, d);
    mmd_gradient(a, b, bank, 1.0, ga, gb);

    auto loss_a = [&](const std::vector<double>& theta) {
      DenseMatrix aa = a;
      aa.data = theta;
      return mmd_squared(aa, b, bank);
    };
    auto close = [](double x, double y) {
      return std::abs(x - y) <= 1e-7 + 1e-4 * std::max(std::abs(x), std::abs(y));
    };
    auto num_a = finite_diff_grad(loss_a, a.data);
    for (std::size_t i = 0; i < ga.size(); ++i) CHECK(close(ga.data[i], num_a[i]));

    auto loss_b = [&](const std::vector<double>& theta) {
      DenseMatrix bb = b;
      bb.data = theta;
      return mmd_squared(a, bb, bank);
    };
    auto num_b = finite_diff_grad(loss_b, b.data);
    for (std::size_t i = 0; i < gb.size(); ++i) CHECK(close(gb.data[i], num_b[i]));
  }
}

TEST_CASE("mmd gradient accumulates with the given weight") {
  Rng rng(65);
  KernelBank bank({1.0});
  DenseMatrix a = random_rows(3, 2, rng);
  DenseMatrix b = random_rows(3, 2, rng, 0.3);
  DenseMatrix ga1(3, 2), gb1(3, 2), ga2(3, 2, 0.25), gb2(3, 2, 0.25);
  mmd_gradient(a, b, bank, 1.0, ga1, gb1);
  mmd_gradient(a, b, bank, 2.0, ga2, gb2);
  for (std::size_t i = 0; i < ga1.size(); ++i)
    CHECK(ga2.data[i] == doctest::Approx(0.25 + 2.0 * ga1.data[i]).epsilon(1e-10));
  for (std::size_t i = 0; i < gb1.size(); ++i)
    CHECK(gb2.data[i] == doctest::Approx(0.25 + 2.0 * gb1.data[i]).epsilon(1e-10));
}

#ifdef _OPENMP
TEST_CASE("mmd value does not depend on the thread count") {
  Rng rng(66);
  KernelBank bank = default_kernel_bank();
  DenseMatrix a = random_rows(33, 5, rng);
  DenseMatrix b = random_rows(17, 5, rng, 0.4);

  int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  double v1 = mmd_squared(a, b, bank);
  omp_set_num_threads(4);
  double v4 = mmd_squared(a, b, bank);
  omp_set_num_threads(saved);
  CHECK(v1 == v4);  // bitwise: per-row partials are reduced in row order
}
#endif
