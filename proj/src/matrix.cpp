#include "msmoe/matrix.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace msmoe {

namespace {

// Below this many output elements the OpenMP fork/join overhead exceeds
// the work; fall through to the serial path.
constexpr std::size_t kParallelCutoff = 16 * 1024;

void check_inner(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw std::invalid_argument(std::string("matrix dimension mismatch in ") + what);
}

}  // namespace

bool DenseMatrix::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

namespace reference {

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  check_inner(a.cols, b.rows, "matmul");
  DenseMatrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      const double* brow = b.data.data() + k * b.cols;
      double* crow = c.data.data() + i * c.cols;
      for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b) {
  check_inner(a.cols, b.cols, "matmul_nt");
  DenseMatrix c(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < b.rows; ++j) {
      c(i, j) = dot(a.row(i), b.row(j));
    }
  }
  return c;
}

DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b) {
  check_inner(a.rows, b.rows, "matmul_tn");
  DenseMatrix c(a.cols, b.cols);
  for (std::size_t k = 0; k < a.rows; ++k) {
    const double* arow = a.data.data() + k * a.cols;
    const double* brow = b.data.data() + k * b.cols;
    for (std::size_t i = 0; i < a.cols; ++i) {
      double* crow = c.data.data() + i * c.cols;
      const double aki = arow[i];
      for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aki * brow[j];
    }
  }
  return c;
}

}  // namespace reference

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  check_inner(a.cols, b.rows, "matmul");
  if (a.rows * b.cols < kParallelCutoff) return reference::matmul(a, b);
  DenseMatrix c(a.rows, b.cols);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(a.rows); ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      const double* brow = b.data.data() + k * b.cols;
      double* crow = c.data.data() + i * c.cols;
      for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b) {
  check_inner(a.cols, b.cols, "matmul_nt");
  if (a.rows * b.rows < kParallelCutoff) return reference::matmul_nt(a, b);
  DenseMatrix c(a.rows, b.rows);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(a.rows); ++i) {
    for (std::size_t j = 0; j < b.rows; ++j) {
      c(i, j) = dot(a.row(i), b.row(j));
    }
  }
  return c;
}

DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b) {
  check_inner(a.rows, b.rows, "matmul_tn");
  if (a.cols * b.cols < kParallelCutoff) return reference::matmul_tn(a, b);
  DenseMatrix c(a.cols, b.cols);
  // Parallel over output rows: thread i owns row i of c, scanning the
  // shared k dimension serially. Same summation order as the reference.
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(a.cols); ++i) {
    double* crow = c.data.data() + i * c.cols;
    for (std::size_t k = 0; k < a.rows; ++k) {
      const double aki = a(k, i);
      const double* brow = b.data.data() + k * b.cols;
      for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aki * brow[j];
    }
  }
  return c;
}

void add_matmul_tn(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c) {
  check_inner(a.rows, b.rows, "add_matmul_tn");
  if (c.rows != a.cols || c.cols != b.cols) {
    throw std::invalid_argument("add_matmul_tn: output shape mismatch");
  }
  DenseMatrix product = matmul_tn(a, b);
  for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] += product.data[i];
}

void add_matmul(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c) {
  check_inner(a.cols, b.rows, "add_matmul");
  if (c.rows != a.rows || c.cols != b.cols) {
    throw std::invalid_argument("add_matmul: output shape mismatch");
  }
  DenseMatrix product = matmul(a, b);
  for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] += product.data[i];
}

double dot(std::span<const double> a, std::span<const double> b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
  return sum;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return sum;
}

void axpy(double scale, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += scale * x[i];
}

}  // namespace msmoe
