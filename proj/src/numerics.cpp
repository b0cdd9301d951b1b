#include "msmoe/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "msmoe/matrix.hpp"

namespace msmoe {

std::vector<double> softmax(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("softmax: empty input");
  const double shift = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - shift);
    sum += out[i];
  }
  for (double& p : out) p /= sum;
  return out;
}

double cross_entropy(std::span<const double> p, std::size_t label) {
  if (label >= p.size()) throw std::invalid_argument("cross_entropy: label out of range");
  return -std::log(std::max(p[label], kProbFloor));
}

KernelBank::KernelBank(std::vector<double> sigmas) : bandwidths(std::move(sigmas)) {
  if (bandwidths.empty()) throw std::invalid_argument("KernelBank: empty bandwidth list");
  for (double s : bandwidths) {
    if (!(s > 0.0)) throw std::invalid_argument("KernelBank: bandwidths must be positive");
  }
}

KernelBank default_kernel_bank() {
  constexpr int kCount = 19;
  constexpr double kLoExp = -6.0;
  constexpr double kHiExp = 6.0;
  std::vector<double> sigmas(kCount);
  for (int i = 0; i < kCount; ++i) {
    const double t = static_cast<double>(i) / (kCount - 1);
    sigmas[i] = std::pow(10.0, kLoExp + (kHiExp - kLoExp) * t);
  }
  return KernelBank(std::move(sigmas));
}

double rbf_kernel_bank(std::span<const double> a, std::span<const double> b,
                       const KernelBank& bank) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("rbf_kernel_bank: vector length mismatch");
  }
  const double sq = squared_distance(a, b);
  double sum = 0.0;
  for (double sigma : bank.bandwidths) {
    sum += std::exp(-sq / (2.0 * sigma));
  }
  return sum;
}

std::vector<double> finite_diff_grad(
    const std::function<double(const std::vector<double>&)>& f,
    const std::vector<double>& theta, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_grad: eps must be positive");
  std::vector<double> grad(theta.size());
  std::vector<double> point = theta;
  for (std::size_t k = 0; k < theta.size(); ++k) {
    point[k] = theta[k] + eps;
    const double plus = f(point);
    point[k] = theta[k] - eps;
    const double minus = f(point);
    point[k] = theta[k];
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      throw std::runtime_error("finite_diff_grad: non-finite value at coordinate " +
                               std::to_string(k));
    }
    grad[k] = (plus - minus) / (2.0 * eps);
  }
  return grad;
}

}  // namespace msmoe
