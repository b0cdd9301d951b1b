#pragma once

#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

namespace msmoe {

// A loss or parameter stopped being finite; training cannot continue.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Probability floor used when taking logs of predicted probabilities.
inline constexpr double kProbFloor = 1e-12;

// Shift-stable softmax. Output entries are in (0, 1] and sum to 1.
std::vector<double> softmax(std::span<const double> v);

// -log p[label], with p[label] clamped at kProbFloor.
double cross_entropy(std::span<const double> p, std::size_t label);

// Bank of RBF bandwidths for the multi-kernel similarity
// k(a, b) = sum_n exp(-|a - b|^2 / (2 * sigma_n)).
struct KernelBank {
  std::vector<double> bandwidths;

  explicit KernelBank(std::vector<double> sigmas);
  std::size_t size() const { return bandwidths.size(); }
};

// 19 bandwidths log-spaced over [1e-6, 1e6], endpoints included.
KernelBank default_kernel_bank();

double rbf_kernel_bank(std::span<const double> a, std::span<const double> b,
                       const KernelBank& bank);

// Central-difference gradient estimate, used as the oracle against every
// analytic backward pass in the test suites.
std::vector<double> finite_diff_grad(
    const std::function<double(const std::vector<double>&)>& f,
    const std::vector<double>& theta, double eps = 1e-5);

}  // namespace msmoe
