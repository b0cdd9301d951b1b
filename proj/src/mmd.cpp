#include "msmoe/mmd.hpp"

#include <cmath>
#include <stdexcept>

namespace msmoe {
namespace {

void check_pair(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows == 0 || b.rows == 0) throw std::invalid_argument("mmd: empty sample");
  if (a.cols != b.cols) throw std::invalid_argument("mmd: dimension mismatch");
}

double kernel(std::span<const double> x, std::span<const double> y, const KernelBank& bank) {
  const double q = squared_distance(x, y);
  double k = 0.0;
  for (double sigma : bank.bandwidths) k += std::exp(-q / (2.0 * sigma));
  return k;
}

// Sum of k(a_i, b_j) over all pairs, one row per thread, partials reduced
// in row order.
double pair_sum(const DenseMatrix& a, const DenseMatrix& b, const KernelBank& bank) {
  std::vector<double> row_sum(a.rows, 0.0);
  const auto n = static_cast<std::int64_t>(a.rows);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    auto ai = a.row(static_cast<std::size_t>(i));
    for (std::size_t j = 0; j < b.rows; ++j) s += kernel(ai, b.row(j), bank);
    row_sum[static_cast<std::size_t>(i)] = s;
  }
  double total = 0.0;
  for (double s : row_sum) total += s;
  return total;
}

}  // namespace

double mmd_squared(const DenseMatrix& a, const DenseMatrix& b, const KernelBank& bank) {
  check_pair(a, b);
  const double n = static_cast<double>(a.rows);
  const double m = static_cast<double>(b.rows);
  return pair_sum(a, a, bank) / (n * n) + pair_sum(b, b, bank) / (m * m) -
         2.0 * pair_sum(a, b, bank) / (n * m);
}

namespace reference {

double mmd_squared(const DenseMatrix& a, const DenseMatrix& b, const KernelBank& bank) {
  check_pair(a, b);
  const double n = static_cast<double>(a.rows);
  const double m = static_cast<double>(b.rows);
  double aa = 0.0, bb = 0.0, ab = 0.0;
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.rows; ++j) aa += kernel(a.row(i), a.row(j), bank);
  for (std::size_t i = 0; i < b.rows; ++i)
    for (std::size_t j = 0; j < b.rows; ++j) bb += kernel(b.row(i), b.row(j), bank);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.rows; ++j) ab += kernel(a.row(i), b.row(j), bank);
  return aa / (n * n) + bb / (m * m) - 2.0 * ab / (n * m);
}

}  // namespace reference

void mmd_gradient(const DenseMatrix& a, const DenseMatrix& b, const KernelBank& bank,
                  double weight, DenseMatrix& grad_a, DenseMatrix& grad_b) {
  check_pair(a, b);
  if (!grad_a.same_shape(a) || !grad_b.same_shape(b))
    throw std::invalid_argument("mmd_gradient: gradient shape mismatch");

  const double n = static_cast<double>(a.rows);
  const double m = static_cast<double>(b.rows);
  const std::size_t dim = a.cols;

  // d k(x,y)/dx = -(x - y) * sum_n exp(-|x-y|^2 / (2 sigma_n)) / sigma_n
  auto pull = [&](std::span<const double> x, std::span<const double> y, double scale,
                  std::span<double> out) {
    const double q = squared_distance(x, y);
    double w = 0.0;
    for (double sigma : bank.bandwidths) w += std::exp(-q / (2.0 * sigma)) / sigma;
    w *= scale;
    for (std::size_t d = 0; d < dim; ++d) out[d] -= w * (x[d] - y[d]);
  };

  const double self_a = weight * 2.0 / (n * n);
  const double self_b = weight * 2.0 / (m * m);
  const double cross = weight * 2.0 / (n * m);

  const auto an = static_cast<std::int64_t>(a.rows);
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < an; ++p) {
    auto row = a.row(static_cast<std::size_t>(p));
    auto out = grad_a.row(static_cast<std::size_t>(p));
    for (std::size_t j = 0; j < a.rows; ++j) pull(row, a.row(j), self_a, out);
    for (std::size_t j = 0; j < b.rows; ++j) pull(row, b.row(j), -cross, out);
  }
  const auto bn = static_cast<std::int64_t>(b.rows);
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < bn; ++p) {
    auto row = b.row(static_cast<std::size_t>(p));
    auto out = grad_b.row(static_cast<std::size_t>(p));
    for (std::size_t j = 0; j < b.rows; ++j) pull(row, b.row(j), self_b, out);
    for (std::size_t j = 0; j < a.rows; ++j) pull(row, a.row(j), -cross, out);
  }
}

}  // namespace msmoe
