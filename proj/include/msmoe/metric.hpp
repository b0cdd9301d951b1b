#pragma once

#include <span>
#include <vector>

#include "msmoe/model.hpp"

namespace msmoe {

// Keeps the distance differentiable at zero; added under the square root.
inline constexpr double kDistanceEpsilon = 1e-12;

// Intermediates of d(h, S) = sqrt(|U^T (h - mu)|^2 + eps), kept because the
// gradient reuses both the projected and the raw offset.
struct DistanceParts {
  double d = 0.0;
  std::vector<double> v;      // U^T delta, length rank
  std::vector<double> delta;  // h - center, length hidden_dim
};

DistanceParts distance_parts(std::span<const double> hidden, std::span<const double> center,
                             const DenseMatrix& u);
double point_to_set_distance(std::span<const double> hidden, std::span<const double> center,
                             const DenseMatrix& u);

// Encoder-space mean (and class-conditional means for labeled
// classification data) over a whole dataset.
DomainStats compute_domain_stats(const ModelParams& model, const DomainDataset& dataset);

// Scalar affinity of one encoded point to one source, higher = closer.
// mcd: |d to one class mean minus d to the other|, the margin a
// class-distance rule would decide with. negative_distance: -d to the
// domain mean. Falls back to negative_distance when class means are
// missing or incomplete.
double source_confidence(const ModelParams& model, std::size_t source, const DomainStats& stats,
                         std::span<const double> hidden);

// Softmax over confidences: the mixture weights.
std::vector<double> normalize_alpha(std::span<const double> confidences);

}  // namespace msmoe
