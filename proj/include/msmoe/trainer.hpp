#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "msmoe/dataset.hpp"
#include "msmoe/model.hpp"
#include "msmoe/objective.hpp"
#include "msmoe/rng.hpp"

namespace msmoe {

enum class TrainMode { moe, uni_ms, best_ss };
const char* mode_name(TrainMode mode);
TrainMode mode_from_name(const std::string& name);

struct TrainConfig {
  std::size_t batch_size = 32;
  double lambda = 0.5;
  double gamma = 0.0;  // 1.0 in the adversarial setting
  double eta = 0.01;
  std::size_t hidden_dim = 64;
  std::size_t embed_dim = 32;
  std::size_t window_radius = 2;
  std::size_t rank = 0;        // 0 resolves to min(hidden_dim, 64)
  double learning_rate = 0.0;  // 0 resolves to 1e-4 for vector input, 1e-3 for tokens
  double weight_decay = 1e-4;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;
  bool stop_gradient_on_means = false;
  bool shared_metric = false;
  bool classifier_bias = false;
  // Class-margin confidence where it applies (two-class vector tasks);
  // false always routes by negative distance to the domain mean, the
  // better signal when domains occupy separate regions.
  bool mcd_confidence = true;

  std::size_t resolved_rank() const { return rank != 0 ? rank : std::min<std::size_t>(hidden_dim, 64); }
  double resolved_lr(TaskKind task) const {
    if (learning_rate != 0.0) return learning_rate;
    return task == TaskKind::binary_classification ? 1e-4 : 1e-3;
  }
};

// The held-out rotation: each source once as the held-out domain, scored
// by the remaining ones.
struct MetaPair {
  std::size_t meta_target = 0;
  std::vector<std::size_t> meta_sources;
};
std::vector<MetaPair> build_meta_pairs(std::size_t k);

struct AdamState {
  ModelParams m;  // first moments, shaped like the parameters
  ModelParams v;  // second moments
  std::size_t step = 0;
};

// Decoupled weight decay, then standard Adam moments
// (beta1 0.9, beta2 0.999, eps 1e-8) with bias correction.
void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, double lr,
               double weight_decay);

// Hands out index batches over a shuffled order, reshuffling each time the
// order is exhausted; a batch may span the boundary, so every example is
// seen once per cycle. Batches are always exactly batch_size indices.
class BatchCycler {
 public:
  BatchCycler(std::size_t n, std::size_t batch_size, Rng rng);
  const std::vector<std::size_t>& next();

 private:
  std::vector<std::size_t> order_;
  std::vector<std::size_t> batch_;
  std::size_t pos_ = 0;
  std::size_t batch_size_;
  Rng rng_;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  LossBreakdown losses;   // mean over the epoch's optimizer steps
  double val_metric = std::numeric_limits<double>::quiet_NaN();
  double learning_rate = 0.0;
};

struct TrainResult {
  ModelBundle bundle;  // best-validation parameters with full-data statistics
  std::vector<EpochLog> log;
  double best_val = std::numeric_limits<double>::quiet_NaN();
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  // Pooled-source vs target discrepancy before and after training, filled
  // only when the adversary is active.
  double initial_target_mmd = std::numeric_limits<double>::quiet_NaN();
  double final_target_mmd = std::numeric_limits<double>::quiet_NaN();
};

// Mixture training over K >= 2 sources; target data is optional and only
// used by the discrepancy term when gamma > 0. Early stopping watches the
// mean held-out accuracy with each source scored by the others' experts.
TrainResult train_moe(const std::vector<DomainDataset>& sources,
                      const DomainDataset* target_unlabeled, const TrainConfig& cfg,
                      const Vocabulary* vocab = nullptr);

// One source, one classifier, no metric factors; the building block for
// both baselines. mode_label lands in the checkpoint metadata.
TrainResult train_single(const DomainDataset& source, const DomainDataset* target_unlabeled,
                         const TrainConfig& cfg, const Vocabulary* vocab = nullptr,
                         const std::string& mode_label = "single");

// All sources concatenated into one domain, preserving unit order.
DomainDataset pool_sources(const std::vector<DomainDataset>& sources);

struct EvalResult {
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  std::vector<double> mean_alpha;  // per source, averaged over scored units
};

// Unit accuracy of the bundle on labeled data; optionally writes one CSV
// row per unit with its mixture weights.
EvalResult evaluate(const ModelBundle& bundle, const DomainDataset& data,
                    const std::string* alpha_csv_path = nullptr);

// Squared discrepancy between the pooled encoded sources and the encoded
// target under the default kernel bank.
double dataset_mmd(const ModelParams& model, const std::vector<DomainDataset>& sources,
                   const DomainDataset& target);

struct GridPoint {
  double lambda = 0.0;
  double eta = 0.0;
  std::size_t rank = 0;
  double learning_rate = 0.0;
  double metric = 0.0;  // mean pseudo-target accuracy
};

struct SweepResult {
  std::size_t best_index = 0;
  TrainConfig best;  // base config with the winning values substituted
  std::vector<GridPoint> report;
};

// Grid search scored by the source-rotation protocol: each source serves
// once as the pseudo-target, a model is trained on the rest, and the grid
// point's score is the mean pseudo-target accuracy. Ties keep the
// earliest point in grid order (lambda, eta, rank, lr nesting).
SweepResult cross_validate(const std::vector<DomainDataset>& sources, const TrainConfig& base,
                           const std::vector<double>& lambdas, const std::vector<double>& etas,
                           const std::vector<std::size_t>& ranks, const std::vector<double>& lrs,
                           const Vocabulary* vocab = nullptr);

}  // namespace msmoe
