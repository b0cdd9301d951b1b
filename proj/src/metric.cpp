#include "msmoe/metric.hpp"

#include <cmath>
#include <stdexcept>

#include "msmoe/encoder.hpp"
#include "msmoe/numerics.hpp"

namespace msmoe {

DistanceParts distance_parts(std::span<const double> hidden, std::span<const double> center,
                             const DenseMatrix& u) {
  if (hidden.size() != u.rows || center.size() != u.rows)
    throw std::invalid_argument("distance: vector length does not match metric factor");
  DistanceParts parts;
  parts.delta.resize(u.rows);
  for (std::size_t i = 0; i < u.rows; ++i) parts.delta[i] = hidden[i] - center[i];
  parts.v.assign(u.cols, 0.0);
  for (std::size_t i = 0; i < u.rows; ++i) {
    const double di = parts.delta[i];
    if (di == 0.0) continue;
    const double* urow = u.data.data() + i * u.cols;
    for (std::size_t j = 0; j < u.cols; ++j) parts.v[j] += di * urow[j];
  }
  double sq = 0.0;
  for (double vj : parts.v) sq += vj * vj;
  parts.d = std::sqrt(sq + kDistanceEpsilon);
  return parts;
}

double point_to_set_distance(std::span<const double> hidden, std::span<const double> center,
                             const DenseMatrix& u) {
  return distance_parts(hidden, center, u).d;
}

DomainStats compute_domain_stats(const ModelParams& model, const DomainDataset& dataset) {
  if (dataset.examples.empty())
    throw std::invalid_argument("compute_domain_stats: empty dataset");
  const std::size_t h = model.config.hidden_dim;
  const std::size_t C = model.config.num_classes;
  const bool classify = model.config.task == TaskKind::binary_classification;

  DomainStats stats;
  stats.mean.assign(h, 0.0);
  if (classify) {
    stats.class_means = DenseMatrix(C, h);
    stats.class_counts.assign(C, 0);
  }

  constexpr std::size_t kChunk = 256;
  for (std::size_t begin = 0; begin < dataset.examples.size(); begin += kChunk) {
    std::size_t end = std::min(begin + kChunk, dataset.examples.size());
    std::vector<const Example*> chunk;
    chunk.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) chunk.push_back(&dataset.examples[i]);
    EncodedBatch enc = encode_batch(model, chunk);
    for (std::size_t u = 0; u < enc.hidden.rows; ++u) {
      axpy(1.0, enc.hidden.row(u), stats.mean);
      ++stats.count;
      int label = enc.labels[u];
      if (!classify || label < 0) continue;
      if (static_cast<std::size_t>(label) >= C)
        throw std::invalid_argument("compute_domain_stats: label out of range");
      axpy(1.0, enc.hidden.row(u), stats.class_means.row(static_cast<std::size_t>(label)));
      ++stats.class_counts[static_cast<std::size_t>(label)];
    }
  }

  for (auto& x : stats.mean) x /= static_cast<double>(stats.count);
  if (classify) {
    // Any class without members makes the margin confidence undefined, so
    // the means are dropped; the counts stay as the signal of why.
    if (!stats.covers_all_classes()) {
      stats.class_means = DenseMatrix();
    } else {
      for (std::size_t c = 0; c < C; ++c)
        for (auto& x : stats.class_means.row(c)) x /= static_cast<double>(stats.class_counts[c]);
    }
  }
  return stats;
}

double source_confidence(const ModelParams& model, std::size_t source, const DomainStats& stats,
                         std::span<const double> hidden) {
  const DenseMatrix& u = model.metric_for(source).u;
  if (model.config.confidence == ConfidenceKind::mcd && stats.has_class_means()) {
    double d0 = point_to_set_distance(hidden, stats.class_means.row(0), u);
    double d1 = point_to_set_distance(hidden, stats.class_means.row(1), u);
    return std::fabs(d0 - d1);
  }
  return -point_to_set_distance(hidden, stats.mean, u);
}

std::vector<double> normalize_alpha(std::span<const double> confidences) {
  return softmax(confidences);
}

}  // namespace msmoe
