#pragma once

#include "msmoe/matrix.hpp"
#include "msmoe/numerics.hpp"

namespace msmoe {

// Biased V-statistic estimate of squared maximum mean discrepancy between
// the row sets of a and b under the summed RBF kernel bank:
//   (1/n^2) sum k(a_i,a_j) + (1/m^2) sum k(b_i,b_j) - (2/nm) sum k(a_i,b_j).
// Parallel over rows; per-row partials are reduced in index order, so the
// result does not depend on the thread count.
double mmd_squared(const DenseMatrix& a, const DenseMatrix& b, const KernelBank& bank);

namespace reference {
// Naive double loop, kept as the oracle for the parallel version.
double mmd_squared(const DenseMatrix& a, const DenseMatrix& b, const KernelBank& bank);
}  // namespace reference

// Accumulates weight * d(mmd^2)/d(rows) into grad_a and grad_b, which must
// already have the shapes of a and b.
void mmd_gradient(const DenseMatrix& a, const DenseMatrix& b, const KernelBank& bank,
                  double weight, DenseMatrix& grad_a, DenseMatrix& grad_b);

}  // namespace msmoe
