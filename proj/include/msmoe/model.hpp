#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "msmoe/dataset.hpp"
#include "msmoe/matrix.hpp"
#include "msmoe/rng.hpp"

namespace msmoe {

// How a point's affinity to a source is scored from learned distances.
// mcd compares class-conditional distances (binary classification);
// negative_distance scores proximity to the whole domain (tagging).
enum class ConfidenceKind { mcd, negative_distance };

const char* confidence_name(ConfidenceKind kind);
ConfidenceKind confidence_from_name(const std::string& name);

struct ModelConfig {
  TaskKind task = TaskKind::binary_classification;
  ConfidenceKind confidence = ConfidenceKind::mcd;
  std::size_t input_dim = 0;     // classification
  std::size_t vocab_size = 0;    // tagging
  std::size_t embed_dim = 32;    // tagging
  std::size_t window_radius = 2; // tagging: tokens each side of the center
  std::size_t hidden_dim = 64;
  std::size_t num_classes = 2;
  std::size_t rank = 8;          // columns of each metric factor
  bool classifier_bias = false;
  bool shared_metric = false;
  // Single-classifier baselines carry no metric factors at all.
  bool has_metrics = true;

  std::size_t encoder_input_dim() const {
    return task == TaskKind::binary_classification ? input_dim
                                                   : embed_dim * (2 * window_radius + 1);
  }
};

struct MlpEncoderParams {
  DenseMatrix w1;  // hidden_dim x input_dim
  DenseMatrix b1;  // 1 x hidden_dim
};

struct TokenEncoderParams {
  DenseMatrix embedding;  // vocab_size x embed_dim, row 0 fixed to zero (padding)
  DenseMatrix w1;         // hidden_dim x (embed_dim * window)
  DenseMatrix b1;         // 1 x hidden_dim
};

struct ClassifierParams {
  DenseMatrix w;  // num_classes x hidden_dim
  DenseMatrix b;  // 1 x num_classes, empty when bias is disabled
};

struct MetricParams {
  DenseMatrix u;  // hidden_dim x rank; the induced form UU^T is PSD by construction
};

// Named view of one tensor, used to walk parameters and their gradient or
// optimizer-state mirrors in lockstep.
struct ParamRef {
  std::string name;
  DenseMatrix* tensor;
};

struct ModelParams {
  ModelConfig config;
  std::vector<std::string> source_names;
  std::variant<MlpEncoderParams, TokenEncoderParams> encoder;
  std::vector<ClassifierParams> classifiers;  // one per source
  std::vector<MetricParams> metrics;          // one per source, or one if shared

  static ModelParams init(const ModelConfig& config, std::vector<std::string> source_names,
                          std::uint64_t seed);

  const MetricParams& metric_for(std::size_t source) const {
    return metrics.at(config.shared_metric ? 0 : source);
  }
  std::size_t metric_index(std::size_t source) const {
    return config.shared_metric ? 0 : source;
  }

  // Same shapes, all zeros; the container for gradients and Adam moments.
  ModelParams zeros_like() const;

  // Stable enumeration: encoder tensors, then classifiers by source, then
  // metric factors. Same order every call for the same shape.
  std::vector<ParamRef> param_refs();
  std::vector<double> flatten() const;
  void unflatten(const std::vector<double>& theta);
  std::size_t parameter_count() const;
};

// Encoder-space summary of one source domain, captured after training so
// evaluation does not need the training data.
struct DomainStats {
  std::vector<double> mean;               // hidden_dim
  DenseMatrix class_means;                // num_classes x hidden_dim, empty if unlabeled
  std::vector<std::size_t> class_counts;  // empty if unlabeled
  std::size_t count = 0;

  bool has_class_means() const { return class_means.rows > 0; }
  bool covers_all_classes() const;
};

// Everything needed to score new data: parameters, per-source statistics,
// output names, and (for tagging) the vocabulary.
struct ModelBundle {
  ModelParams params;
  std::vector<DomainStats> stats;  // parallel to params.source_names
  std::vector<std::string> label_names;
  Vocabulary vocab;
  std::vector<std::pair<std::string, std::string>> metadata;  // provenance, ordered
};

void save_checkpoint(const std::string& path, const ModelBundle& bundle);
ModelBundle load_checkpoint(const std::string& path);

}  // namespace msmoe
