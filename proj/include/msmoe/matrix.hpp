#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace msmoe {

// Dense row-major matrix of doubles. All model parameters, encodings and
// gradients live in this type.
struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

  std::size_t size() const { return data.size(); }
  bool same_shape(const DenseMatrix& other) const {
    return rows == other.rows && cols == other.cols;
  }
  void set_zero() { data.assign(data.size(), 0.0); }
  bool all_finite() const;
};

// Parallel kernels. Each output element is produced by exactly one
// thread with a serial inner loop, so results are bit-identical to the
// serial reference below regardless of thread count.
//
// c = a * b            (a: n x k, b: k x m)
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
// c = a * b^T          (a: n x k, b: m x k)
DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b);
// c = a^T * b          (a: k x n, b: k x m)
DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b);
// c += a^T * b, in place
void add_matmul_tn(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c);
// c += a * b, in place
void add_matmul(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c);

// Serial reference implementations, kept for tests and benchmarks.
namespace reference {
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b);
}  // namespace reference

double dot(std::span<const double> a, std::span<const double> b);
double squared_distance(std::span<const double> a, std::span<const double> b);
void axpy(double scale, std::span<const double> x, std::span<double> y);

}  // namespace msmoe
