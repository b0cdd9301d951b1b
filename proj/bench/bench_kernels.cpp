// Times the OpenMP kernels against their serial reference versions and
// checks that both produce identical bits. Run with OMP_NUM_THREADS set
// to compare thread counts.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>

#include "msmoe/matrix.hpp"
#include "msmoe/mmd.hpp"
#include "msmoe/numerics.hpp"
#include "msmoe/rng.hpp"

using namespace msmoe;

namespace {

DenseMatrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  DenseMatrix m(r, c);
  for (auto& x : m.data) x = rng.gaussian();
  return m;
}

template <typename F>
double time_ms(F&& f, int repeats) {
  auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < repeats; ++i) f();
  auto end = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(end - start).count() / repeats;
}

bool identical(const DenseMatrix& a, const DenseMatrix& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.data[i] != b.data[i]) return false;
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  int repeats = argc > 1 ? std::stoi(argv[1]) : 5;
  Rng rng(7);

  std::printf("%-28s %12s %12s %8s %6s\n", "kernel", "parallel ms", "serial ms", "speedup",
              "bits");

  {
    const std::size_t n = 384, k = 256, m = 192;
    DenseMatrix a = random_matrix(n, k, rng);
    DenseMatrix b = random_matrix(k, m, rng);
    DenseMatrix out_par, out_ser;
    double par = time_ms([&] { out_par = matmul(a, b); }, repeats);
    double ser = time_ms([&] { out_ser = reference::matmul(a, b); }, repeats);
    std::printf("%-28s %12.3f %12.3f %8.2fx %6s\n", "matmul 384x256x192", par, ser, ser / par,
                identical(out_par, out_ser) ? "same" : "DIFF");
  }

  {
    const std::size_t n = 384, k = 256, m = 192;
    DenseMatrix a = random_matrix(n, k, rng);
    DenseMatrix bt = random_matrix(m, k, rng);
    DenseMatrix out_par, out_ser;
    double par = time_ms([&] { out_par = matmul_nt(a, bt); }, repeats);
    double ser = time_ms([&] { out_ser = reference::matmul_nt(a, bt); }, repeats);
    std::printf("%-28s %12.3f %12.3f %8.2fx %6s\n", "matmul_nt 384x256x192", par, ser,
                ser / par, identical(out_par, out_ser) ? "same" : "DIFF");
  }

  {
    // The reference sums in a different order, so agreement is reported
    // as a relative difference rather than a bit check.
    const std::size_t n = 512, m = 256, d = 64;
    DenseMatrix a = random_matrix(n, d, rng);
    DenseMatrix b = random_matrix(m, d, rng);
    KernelBank bank = default_kernel_bank();
    double v_par = 0.0, v_ser = 0.0;
    double par = time_ms([&] { v_par = mmd_squared(a, b, bank); }, repeats);
    double ser = time_ms([&] { v_ser = reference::mmd_squared(a, b, bank); }, repeats);
    double rel = std::abs(v_par - v_ser) / std::max(std::abs(v_ser), 1e-300);
    char relbuf[16];
    std::snprintf(relbuf, sizeof(relbuf), "%.0e", rel);
    std::printf("%-28s %12.3f %12.3f %8.2fx %6s\n", "mmd 512v256 d64", par, ser, ser / par,
                relbuf);
  }

  return 0;
}
