#include "msmoe/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>

#include "msmoe/metric.hpp"
#include "msmoe/mmd.hpp"
#include "msmoe/moe.hpp"

namespace msmoe {
namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void validate_config(const TrainConfig& cfg, TaskKind task) {
  if (cfg.batch_size < 1) throw std::invalid_argument("train: batch_size must be at least 1");
  if (cfg.patience < 1) throw std::invalid_argument("train: patience must be at least 1");
  if (cfg.max_epochs < 1) throw std::invalid_argument("train: max_epochs must be at least 1");
  if (!(cfg.resolved_lr(task) > 0.0))
    throw std::invalid_argument("train: learning rate must be positive");
  if (cfg.lambda < 0.0 || cfg.lambda > 1.0)
    throw std::invalid_argument("train: lambda must lie in [0,1]");
  if (cfg.gamma < 0.0) throw std::invalid_argument("train: gamma must be non-negative");
  if (cfg.eta < 0.0) throw std::invalid_argument("train: eta must be non-negative");
  if (cfg.weight_decay < 0.0)
    throw std::invalid_argument("train: weight_decay must be non-negative");
  if (cfg.hidden_dim == 0) throw std::invalid_argument("train: hidden_dim must be positive");
  if (cfg.val_fraction < 0.0 || cfg.val_fraction >= 1.0)
    throw std::invalid_argument("train: val_fraction must lie in [0,1)");
}

void check_same_shape(const std::vector<DomainDataset>& sources) {
  for (std::size_t i = 1; i < sources.size(); ++i) {
    if (sources[i].task != sources[0].task)
      throw std::invalid_argument("train: sources mix tasks");
    if (sources[i].feature_dim != sources[0].feature_dim)
      throw std::invalid_argument("train: sources disagree on feature dimension");
    if (sources[i].label_names != sources[0].label_names)
      throw std::invalid_argument("train: sources disagree on the label set");
  }
}

std::vector<const Example*> index_batch(const DomainDataset& ds,
                                        const std::vector<std::size_t>& idx) {
  std::vector<const Example*> batch;
  batch.reserve(idx.size());
  for (std::size_t i : idx) batch.push_back(&ds.examples[i]);
  return batch;
}

DenseMatrix encode_all(const ModelParams& model, const DomainDataset& ds) {
  DenseMatrix out(ds.unit_count(), model.config.hidden_dim);
  constexpr std::size_t kChunk = 256;
  std::size_t at = 0;
  for (std::size_t begin = 0; begin < ds.examples.size(); begin += kChunk) {
    std::size_t end = std::min(begin + kChunk, ds.examples.size());
    std::vector<const Example*> chunk;
    for (std::size_t i = begin; i < end; ++i) chunk.push_back(&ds.examples[i]);
    EncodedBatch enc = encode_batch(model, chunk);
    for (std::size_t u = 0; u < enc.hidden.rows; ++u, ++at)
      std::copy(enc.hidden.row(u).begin(), enc.hidden.row(u).end(), out.row(at).begin());
  }
  return out;
}

// Accuracy of the mixture (optionally excluding one source) on labeled
// units.
double mixture_accuracy(const ModelParams& model, const std::vector<DomainStats>& stats,
                        const DomainDataset& data, int exclude) {
  std::size_t correct = 0, total = 0;
  constexpr std::size_t kChunk = 256;
  for (std::size_t begin = 0; begin < data.examples.size(); begin += kChunk) {
    std::size_t end = std::min(begin + kChunk, data.examples.size());
    std::vector<const Example*> chunk;
    for (std::size_t i = begin; i < end; ++i) chunk.push_back(&data.examples[i]);
    EncodedBatch enc = encode_batch(model, chunk);
    for (std::size_t u = 0; u < enc.hidden.rows; ++u) {
      if (enc.labels[u] < 0) continue;
      MixtureOutput out = moe_posterior(model, stats, enc.hidden.row(u), exclude);
      if (out.predicted == enc.labels[u]) ++correct;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

struct SplitParts {
  DomainDataset train;
  std::optional<DomainDataset> val;
};

SplitParts split_for_val(const DomainDataset& ds, double fraction, std::uint64_t seed) {
  SplitParts parts;
  const auto n = static_cast<double>(ds.examples.size());
  const auto held = std::llround(fraction * n);
  if (fraction <= 0.0 || held < 1 || held >= std::llround(n)) {
    parts.train = ds;
    return parts;
  }
  auto [train, val] = split(ds, fraction, seed);
  parts.train = std::move(train);
  parts.val = std::move(val);
  return parts;
}

TrainResult train_impl(const std::vector<DomainDataset>& sources, const DomainDataset* target,
                       const TrainConfig& cfg, const Vocabulary* vocab, bool mixture,
                       const std::string& mode_label) {
  const std::size_t K = sources.size();
  if (sources.empty()) throw std::invalid_argument("train: no sources");
  for (const auto& s : sources) {
    if (s.examples.empty()) throw std::invalid_argument("train: empty source " + s.name);
    if (!s.labeled()) throw std::invalid_argument("train: unlabeled source " + s.name);
  }
  check_same_shape(sources);
  const TaskKind task = sources[0].task;
  validate_config(cfg, task);
  if (mixture && K < 2)
    throw std::invalid_argument("train: the mixture needs at least two sources");
  if (cfg.gamma > 0.0 && target == nullptr)
    throw std::invalid_argument("train: adversarial training needs target data");
  if (task == TaskKind::sequence_tagging && vocab == nullptr)
    throw std::invalid_argument("train: tagging needs a vocabulary");
  if (target != nullptr) {
    if (target->task != task) throw std::invalid_argument("train: target task mismatch");
    if (task == TaskKind::binary_classification && target->feature_dim != sources[0].feature_dim)
      throw std::invalid_argument("train: target feature dimension mismatch");
  }
  if (sources[0].label_names.size() < 2)
    throw std::invalid_argument("train: need at least two classes");

  Rng root(cfg.seed);
  const double lr = cfg.resolved_lr(task);

  // Held-out portions for early stopping.
  std::vector<DomainDataset> train_parts;
  std::vector<std::optional<DomainDataset>> val_parts;
  for (std::size_t i = 0; i < K; ++i) {
    Rng fork = root.fork("split:" + std::to_string(i));
    SplitParts parts = split_for_val(sources[i], cfg.val_fraction, fork.next_u64());
    train_parts.push_back(std::move(parts.train));
    val_parts.push_back(std::move(parts.val));
  }
  bool has_val = false;
  for (const auto& v : val_parts)
    if (v.has_value()) has_val = true;

  ModelConfig mc;
  mc.task = task;
  const bool two_class =
      task == TaskKind::binary_classification && sources[0].label_names.size() == 2;
  mc.confidence = two_class && cfg.mcd_confidence ? ConfidenceKind::mcd
                                                  : ConfidenceKind::negative_distance;
  mc.input_dim = sources[0].feature_dim;
  if (task == TaskKind::sequence_tagging) {
    mc.vocab_size = vocab->size();
    mc.embed_dim = cfg.embed_dim;
    mc.window_radius = cfg.window_radius;
  }
  mc.hidden_dim = cfg.hidden_dim;
  mc.num_classes = sources[0].label_names.size();
  mc.rank = cfg.resolved_rank();
  mc.classifier_bias = cfg.classifier_bias;
  mc.shared_metric = cfg.shared_metric;
  mc.has_metrics = mixture;

  std::vector<std::string> names;
  for (const auto& s : sources) names.push_back(s.name);
  ModelParams params = ModelParams::init(mc, names, root.fork("init").next_u64());
  AdamState state{params.zeros_like(), params.zeros_like(), 0};

  std::vector<BatchCycler> cyclers;
  std::size_t min_n = train_parts[0].examples.size();
  for (std::size_t i = 0; i < K; ++i) {
    cyclers.emplace_back(train_parts[i].examples.size(), cfg.batch_size,
                         root.fork("cycler:" + std::to_string(i)));
    min_n = std::min(min_n, train_parts[i].examples.size());
  }
  std::optional<BatchCycler> target_cycler;
  if (cfg.gamma > 0.0)
    target_cycler.emplace(target->examples.size(), cfg.batch_size, root.fork("cycler:target"));

  const std::size_t steps_per_epoch = (min_n + cfg.batch_size - 1) / cfg.batch_size;

  StepOptions opts;
  opts.lambda = cfg.lambda;
  opts.gamma = cfg.gamma;
  opts.eta = cfg.eta;
  opts.stop_gradient_on_means = cfg.stop_gradient_on_means;

  LossWeights w;
  if (mixture) {
    w.moe = cfg.lambda;
    w.mtl = 1.0 - cfg.lambda;
    w.adv = cfg.gamma;
    w.entropy = cfg.eta;
  } else {
    w.mtl = 1.0;
    w.adv = cfg.gamma;
  }

  TrainResult result;
  if (cfg.gamma > 0.0) result.initial_target_mmd = dataset_mmd(params, sources, *target);

  ModelParams best_params = params;
  double best_val = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    LossBreakdown mean;
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      std::vector<std::vector<const Example*>> batches;
      batches.reserve(K);
      for (std::size_t i = 0; i < K; ++i)
        batches.push_back(index_batch(train_parts[i], cyclers[i].next()));
      std::vector<const Example*> target_batch;
      if (target_cycler) target_batch = index_batch(*target, target_cycler->next());

      ModelParams grads = params.zeros_like();
      LossBreakdown bd = compute_step_weighted(params, batches, target_batch, w, opts, &grads);
      adam_step(params, grads, state, lr, cfg.weight_decay);

      mean.moe += bd.moe;
      mean.mtl += bd.mtl;
      mean.adv += bd.adv;
      mean.entropy += bd.entropy;
      mean.total += bd.total;
    }
    const auto steps = static_cast<double>(steps_per_epoch);
    mean.moe /= steps;
    mean.mtl /= steps;
    mean.adv /= steps;
    mean.entropy /= steps;
    mean.total /= steps;

    double val_metric = std::numeric_limits<double>::quiet_NaN();
    if (has_val) {
      std::vector<DomainStats> stats;
      stats.reserve(K);
      for (std::size_t i = 0; i < K; ++i)
        stats.push_back(compute_domain_stats(params, train_parts[i]));
      double acc_sum = 0.0;
      std::size_t acc_count = 0;
      for (std::size_t i = 0; i < K; ++i) {
        if (!val_parts[i].has_value()) continue;
        int exclude = mixture ? static_cast<int>(i) : -1;
        acc_sum += mixture_accuracy(params, stats, *val_parts[i], exclude);
        ++acc_count;
      }
      val_metric = acc_sum / static_cast<double>(acc_count);
      if (val_metric > best_val) {
        best_val = val_metric;
        best_epoch = epoch;
        best_params = params;
        since_best = 0;
      } else {
        ++since_best;
      }
    }

    result.log.push_back({epoch, mean, val_metric, lr});
    result.epochs_run = epoch;
    if (has_val && since_best >= cfg.patience) break;
  }

  if (has_val) {
    params = std::move(best_params);
    result.best_val = best_val;
    result.best_epoch = best_epoch;
  } else {
    result.best_epoch = result.epochs_run;
  }

  ModelBundle& bundle = result.bundle;
  bundle.params = std::move(params);
  for (const auto& s : sources) bundle.stats.push_back(compute_domain_stats(bundle.params, s));
  bundle.label_names = sources[0].label_names;
  if (vocab != nullptr) bundle.vocab = *vocab;
  bundle.metadata = {
      {"mode", mode_label},
      {"task", task_name(task)},
      {"seed", std::to_string(cfg.seed)},
      {"learning_rate", fmt_double(lr)},
      {"lambda", fmt_double(cfg.lambda)},
      {"gamma", fmt_double(cfg.gamma)},
      {"eta", fmt_double(cfg.eta)},
      {"rank", std::to_string(mc.rank)},
      {"hidden_dim", std::to_string(cfg.hidden_dim)},
      {"batch_size", std::to_string(cfg.batch_size)},
      {"weight_decay", fmt_double(cfg.weight_decay)},
      {"epochs_run", std::to_string(result.epochs_run)},
      {"best_epoch", std::to_string(result.best_epoch)},
  };
  if (has_val) bundle.metadata.emplace_back("best_val", fmt_double(result.best_val));

  if (cfg.gamma > 0.0) result.final_target_mmd = dataset_mmd(bundle.params, sources, *target);
  return result;
}

}  // namespace

const char* mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::moe: return "moe";
    case TrainMode::uni_ms: return "uni-ms";
    case TrainMode::best_ss: return "best-ss";
  }
  return "moe";
}

TrainMode mode_from_name(const std::string& name) {
  if (name == "moe") return TrainMode::moe;
  if (name == "uni-ms") return TrainMode::uni_ms;
  if (name == "best-ss") return TrainMode::best_ss;
  throw std::invalid_argument("unknown training mode: " + name);
}

std::vector<MetaPair> build_meta_pairs(std::size_t k) {
  if (k < 2) throw std::invalid_argument("build_meta_pairs: need at least two sources");
  std::vector<MetaPair> pairs;
  pairs.reserve(k);
  for (std::size_t t = 0; t < k; ++t) {
    MetaPair p;
    p.meta_target = t;
    for (std::size_t i = 0; i < k; ++i)
      if (i != t) p.meta_sources.push_back(i);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, double lr,
               double weight_decay) {
  auto prefs = params.param_refs();
  auto grefs = const_cast<ModelParams&>(grads).param_refs();
  auto mrefs = state.m.param_refs();
  auto vrefs = state.v.param_refs();
  if (grefs.size() != prefs.size() || mrefs.size() != prefs.size() || vrefs.size() != prefs.size())
    throw std::invalid_argument("adam_step: parameter group mismatch");

  ++state.step;
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));

  for (std::size_t r = 0; r < prefs.size(); ++r) {
    DenseMatrix& p = *prefs[r].tensor;
    const DenseMatrix& g = *grefs[r].tensor;
    DenseMatrix& m = *mrefs[r].tensor;
    DenseMatrix& v = *vrefs[r].tensor;
    if (!g.same_shape(p) || !m.same_shape(p) || !v.same_shape(p))
      throw std::invalid_argument("adam_step: shape mismatch in " + prefs[r].name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      p.data[i] -= lr * weight_decay * p.data[i];
      m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * g.data[i];
      v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * g.data[i] * g.data[i];
      const double mhat = m.data[i] / bc1;
      const double vhat = v.data[i] / bc2;
      p.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

BatchCycler::BatchCycler(std::size_t n, std::size_t batch_size, Rng rng)
    : batch_size_(batch_size), rng_(rng) {
  if (n == 0) throw std::invalid_argument("BatchCycler: empty dataset");
  if (batch_size == 0) throw std::invalid_argument("BatchCycler: batch size must be positive");
  order_.resize(n);
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  rng_.shuffle(order_);
}

const std::vector<std::size_t>& BatchCycler::next() {
  batch_.clear();
  while (batch_.size() < batch_size_) {
    if (pos_ == order_.size()) {
      rng_.shuffle(order_);
      pos_ = 0;
    }
    batch_.push_back(order_[pos_++]);
  }
  return batch_;
}

TrainResult train_moe(const std::vector<DomainDataset>& sources,
                      const DomainDataset* target_unlabeled, const TrainConfig& cfg,
                      const Vocabulary* vocab) {
  return train_impl(sources, target_unlabeled, cfg, vocab, true, "moe");
}

TrainResult train_single(const DomainDataset& source, const DomainDataset* target_unlabeled,
                         const TrainConfig& cfg, const Vocabulary* vocab,
                         const std::string& mode_label) {
  return train_impl({source}, target_unlabeled, cfg, vocab, false, mode_label);
}

DomainDataset pool_sources(const std::vector<DomainDataset>& sources) {
  if (sources.empty()) throw std::invalid_argument("pool_sources: no sources");
  check_same_shape(sources);
  DomainDataset pooled;
  pooled.name = "pooled";
  pooled.task = sources[0].task;
  pooled.feature_dim = sources[0].feature_dim;
  pooled.label_names = sources[0].label_names;
  for (const auto& s : sources)
    pooled.examples.insert(pooled.examples.end(), s.examples.begin(), s.examples.end());
  return pooled;
}

EvalResult evaluate(const ModelBundle& bundle, const DomainDataset& data,
                    const std::string* alpha_csv_path) {
  if (data.examples.empty()) throw std::invalid_argument("evaluate: empty dataset");
  if (data.task != bundle.params.config.task)
    throw std::invalid_argument("evaluate: checkpoint and data disagree on the task");

  const ModelParams& model = bundle.params;
  const std::size_t K = model.source_names.size();

  std::ofstream csv;
  if (alpha_csv_path != nullptr) {
    csv.open(*alpha_csv_path);
    if (!csv) throw ParseError(*alpha_csv_path + ": cannot open for writing");
    csv << "example_id,true_label,predicted_label";
    for (const auto& name : model.source_names) csv << ",alpha_" << name;
    csv << '\n';
  }

  auto label_name = [&](int label) -> std::string {
    if (label < 0) return "";
    if (static_cast<std::size_t>(label) < bundle.label_names.size())
      return bundle.label_names[static_cast<std::size_t>(label)];
    return std::to_string(label);
  };

  EvalResult result;
  result.mean_alpha.assign(K, 0.0);
  std::size_t units = 0;

  constexpr std::size_t kChunk = 256;
  for (std::size_t begin = 0; begin < data.examples.size(); begin += kChunk) {
    std::size_t end = std::min(begin + kChunk, data.examples.size());
    std::vector<const Example*> chunk;
    for (std::size_t i = begin; i < end; ++i) chunk.push_back(&data.examples[i]);
    EncodedBatch enc = encode_batch(model, chunk);

    // Unit ids: example index, or sentence:token for tagging.
    std::size_t u = 0;
    for (std::size_t i = begin; i < end; ++i) {
      const std::size_t tokens =
          data.task == TaskKind::sequence_tagging ? data.examples[i].tokens.size() : 1;
      for (std::size_t t = 0; t < tokens; ++t, ++u) {
        MixtureOutput out = moe_posterior(model, bundle.stats, enc.hidden.row(u));
        for (std::size_t k = 0; k < K; ++k) result.mean_alpha[k] += out.alpha[k];
        ++units;
        const int label = enc.labels[u];
        if (label >= 0) {
          if (out.predicted == label) ++result.correct;
          ++result.total;
        }
        if (csv.is_open()) {
          if (data.task == TaskKind::sequence_tagging)
            csv << i << ':' << t;
          else
            csv << i;
          csv << ',' << label_name(label) << ',' << label_name(out.predicted);
          for (std::size_t k = 0; k < K; ++k) csv << ',' << fmt_double(out.alpha[k]);
          csv << '\n';
        }
      }
    }
  }

  for (auto& a : result.mean_alpha) a /= static_cast<double>(units);
  result.accuracy =
      result.total == 0 ? 0.0 : static_cast<double>(result.correct) / static_cast<double>(result.total);
  if (csv.is_open() && !csv) throw ParseError(*alpha_csv_path + ": write failed");
  return result;
}

double dataset_mmd(const ModelParams& model, const std::vector<DomainDataset>& sources,
                   const DomainDataset& target) {
  std::size_t total = 0;
  for (const auto& s : sources) total += s.unit_count();
  DenseMatrix pooled(total, model.config.hidden_dim);
  std::size_t at = 0;
  for (const auto& s : sources) {
    DenseMatrix enc = encode_all(model, s);
    for (std::size_t i = 0; i < enc.rows; ++i, ++at)
      std::copy(enc.row(i).begin(), enc.row(i).end(), pooled.row(at).begin());
  }
  DenseMatrix target_enc = encode_all(model, target);
  return mmd_squared(pooled, target_enc, default_kernel_bank());
}

SweepResult cross_validate(const std::vector<DomainDataset>& sources, const TrainConfig& base,
                           const std::vector<double>& lambdas, const std::vector<double>& etas,
                           const std::vector<std::size_t>& ranks, const std::vector<double>& lrs,
                           const Vocabulary* vocab) {
  if (sources.size() < 2)
    throw std::invalid_argument("cross_validate: need at least two sources");
  if (lambdas.empty() || etas.empty() || ranks.empty() || lrs.empty())
    throw std::invalid_argument("cross_validate: empty grid");

  const std::size_t K = sources.size();
  SweepResult result;
  double best_metric = -std::numeric_limits<double>::infinity();

  for (double lambda : lambdas) {
    for (double eta : etas) {
      for (std::size_t rank : ranks) {
        for (double lr : lrs) {
          TrainConfig cfg = base;
          cfg.lambda = lambda;
          cfg.eta = eta;
          cfg.rank = rank;
          cfg.learning_rate = lr;

          double acc_sum = 0.0;
          for (std::size_t i = 0; i < K; ++i) {
            std::vector<DomainDataset> rest;
            for (std::size_t j = 0; j < K; ++j)
              if (j != i) rest.push_back(sources[j]);

            TrainConfig fold_cfg = cfg;
            fold_cfg.seed = Rng(base.seed).fork("rotation:" + std::to_string(i)).next_u64();
            const DomainDataset* fold_target = cfg.gamma > 0.0 ? &sources[i] : nullptr;

            // Two remaining sources are the minimum for a mixture; a
            // single remainder degrades to the one-classifier baseline.
            TrainResult trained =
                rest.size() >= 2
                    ? train_moe(rest, fold_target, fold_cfg, vocab)
                    : train_single(rest[0], fold_target, fold_cfg, vocab, "rotation-single");
            acc_sum += evaluate(trained.bundle, sources[i]).accuracy;
          }

          GridPoint point;
          point.lambda = lambda;
          point.eta = eta;
          point.rank = rank;
          point.learning_rate = lr;
          point.metric = acc_sum / static_cast<double>(K);
          if (point.metric > best_metric) {
            best_metric = point.metric;
            result.best_index = result.report.size();
            result.best = cfg;
          }
          result.report.push_back(point);
        }
      }
    }
  }
  return result;
}

}  // namespace msmoe
