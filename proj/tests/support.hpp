#pragma once

// Shared harness for the gradient and oracle checks: randomized toy
// instances, a finite-difference comparison over every parameter group,
// and flat reimplementations of the loss terms that avoid the library's
// own assembly code.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "msmoe/metric.hpp"
#include "msmoe/objective.hpp"
#include "msmoe/rng.hpp"

namespace msmoe::testsupport {

struct ToyInstance {
  ModelParams model;
  std::vector<std::vector<Example>> owned_sources;
  std::vector<Example> owned_target;
  // Views into the owned storage; valid as long as the instance is not
  // copied (moves are fine, vector storage stays put).
  std::vector<std::vector<const Example*>> sources;
  std::vector<const Example*> target;
};

// Random instance inside the toy bounds: K in 2..4, hidden <= 8, rank <= 4,
// batches of 2..6 units. Alternates task, confidence kind, bias and
// metric sharing across seeds.
inline ToyInstance make_toy(std::uint64_t seed, int force_task = -1) {
  Rng rng(seed * 0x9e3779b97f4a7c15ULL + 12345);
  ToyInstance inst;

  const bool tagging = force_task == -1 ? (seed % 3 == 2) : force_task == 1;
  const std::size_t K = 2 + rng.uniform_index(3);

  ModelConfig cfg;
  cfg.hidden_dim = 2 + rng.uniform_index(7);
  cfg.rank = 1 + rng.uniform_index(std::min<std::size_t>(4, cfg.hidden_dim));
  cfg.classifier_bias = seed % 2 == 1;
  cfg.shared_metric = seed % 4 == 3;
  if (tagging) {
    cfg.task = TaskKind::sequence_tagging;
    cfg.confidence = ConfidenceKind::negative_distance;
    cfg.vocab_size = 9;
    cfg.embed_dim = 2 + rng.uniform_index(2);
    cfg.window_radius = 1;
    cfg.num_classes = 2 + rng.uniform_index(2);
  } else {
    cfg.task = TaskKind::binary_classification;
    cfg.input_dim = 3 + rng.uniform_index(10);
    cfg.num_classes = seed % 2 == 0 ? 2 : 2 + rng.uniform_index(2);
    cfg.confidence = cfg.num_classes == 2 && seed % 2 == 0 ? ConfidenceKind::mcd
                                                           : ConfidenceKind::negative_distance;
  }

  std::vector<std::string> names;
  for (std::size_t k = 0; k < K; ++k) names.push_back("s" + std::to_string(k));
  inst.model = ModelParams::init(cfg, names, rng.next_u64());

  auto random_example = [&](Rng& r) {
    Example ex;
    if (tagging) {
      std::size_t len = 1 + r.uniform_index(3);
      for (std::size_t t = 0; t < len; ++t) {
        ex.tokens.push_back(static_cast<int>(2 + r.uniform_index(cfg.vocab_size - 2)));
        ex.tags.push_back(static_cast<int>(r.uniform_index(cfg.num_classes)));
      }
    } else {
      for (std::size_t d = 0; d < cfg.input_dim; ++d) ex.features.push_back(r.gaussian());
      ex.label = static_cast<int>(r.uniform_index(cfg.num_classes));
    }
    return ex;
  };

  inst.owned_sources.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    Rng r = rng.fork(1000 + k);
    std::size_t n = 2 + r.uniform_index(tagging ? 2 : 5);
    for (std::size_t i = 0; i < n; ++i) inst.owned_sources[k].push_back(random_example(r));
  }
  {
    Rng r = rng.fork(2000);
    std::size_t n = 2 + r.uniform_index(4);
    for (std::size_t i = 0; i < n; ++i) {
      Example ex = random_example(r);
      ex.label = -1;
      ex.tags.assign(ex.tags.size(), -1);
      inst.owned_target.push_back(std::move(ex));
    }
  }

  inst.sources.resize(K);
  for (std::size_t k = 0; k < K; ++k)
    for (const auto& ex : inst.owned_sources[k]) inst.sources[k].push_back(&ex);
  for (const auto& ex : inst.owned_target) inst.target.push_back(&ex);
  return inst;
}

struct GradCheck {
  double max_rel_err = 0.0;  // per entry, relative to max(|analytic|, |numeric|, 1)
  double grad_l1 = 0.0;      // over unmasked analytic entries
  std::size_t entries = 0;

  bool ok(double tol) const { return entries > 0 && max_rel_err < tol; }
};

// Compares the fused backward pass against central finite differences of
// the weighted total. The padding embedding row is pinned at zero by
// construction, so its entries are excluded.
inline GradCheck check_step_gradients(const ToyInstance& inst, const LossWeights& w,
                                      const StepOptions& opts, double fd_eps = 1e-5) {
  ModelParams grads = inst.model.zeros_like();
  (void)compute_step_weighted(inst.model, inst.sources, inst.target, w, opts, &grads);
  std::vector<double> analytic = grads.flatten();

  auto loss_at = [&](const std::vector<double>& theta) {
    ModelParams m = inst.model;
    m.unflatten(theta);
    return compute_step_weighted(m, inst.sources, inst.target, w, opts, nullptr).total;
  };
  std::vector<double> numeric = finite_diff_grad(loss_at, inst.model.flatten(), fd_eps);

  const std::size_t skip =
      inst.model.config.task == TaskKind::sequence_tagging ? inst.model.config.embed_dim : 0;
  GradCheck out;
  for (std::size_t i = skip; i < analytic.size(); ++i) {
    double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1.0});
    out.max_rel_err = std::max(out.max_rel_err, std::abs(analytic[i] - numeric[i]) / denom);
    out.grad_l1 += std::abs(analytic[i]);
    ++out.entries;
  }
  return out;
}

namespace detail {

inline std::vector<double> softmax_flat(const std::vector<double>& v) {
  double mx = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    sum += out[i];
  }
  for (auto& x : out) x /= sum;
  return out;
}

// sqrt(delta^T U U^T delta + eps) through the explicit h x h form.
inline double quad_distance(std::span<const double> h, std::span<const double> c,
                            const DenseMatrix& u) {
  const std::size_t n = u.rows;
  double q = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double m_ij = 0.0;
      for (std::size_t r = 0; r < u.cols; ++r) m_ij += u(i, r) * u(j, r);
      q += (h[i] - c[i]) * m_ij * (h[j] - c[j]);
    }
  return std::sqrt(q + kDistanceEpsilon);
}

struct FlatBatch {
  DenseMatrix hidden;
  std::vector<int> labels;
  std::vector<double> mean;
  DenseMatrix class_means;
  std::vector<std::size_t> class_counts;
  bool complete = false;  // every class present in this batch
};

inline FlatBatch flat_encode(const ModelParams& model, const std::vector<const Example*>& batch) {
  FlatBatch fb;
  EncodedBatch enc = encode_batch(model, batch);
  fb.hidden = enc.hidden;
  fb.labels = enc.labels;
  const std::size_t h = fb.hidden.cols, C = model.config.num_classes;
  fb.mean.assign(h, 0.0);
  fb.class_means = DenseMatrix(C, h);
  fb.class_counts.assign(C, 0);
  for (std::size_t i = 0; i < fb.hidden.rows; ++i) {
    for (std::size_t j = 0; j < h; ++j) fb.mean[j] += fb.hidden(i, j);
    if (fb.labels[i] >= 0) {
      auto y = static_cast<std::size_t>(fb.labels[i]);
      ++fb.class_counts[y];
      for (std::size_t j = 0; j < h; ++j) fb.class_means(y, j) += fb.hidden(i, j);
    }
  }
  for (auto& x : fb.mean) x /= static_cast<double>(fb.hidden.rows);
  fb.complete = true;
  for (std::size_t c = 0; c < C; ++c) {
    if (fb.class_counts[c] == 0) {
      fb.complete = false;
      continue;
    }
    for (std::size_t j = 0; j < h; ++j)
      fb.class_means(c, j) /= static_cast<double>(fb.class_counts[c]);
  }
  return fb;
}

inline double flat_confidence(const ModelParams& model, std::size_t k, const FlatBatch& fb,
                              std::span<const double> point) {
  const DenseMatrix& u = model.metric_for(k).u;
  if (model.config.confidence == ConfidenceKind::mcd && fb.complete) {
    double d0 = quad_distance(point, fb.class_means.row(0), u);
    double d1 = quad_distance(point, fb.class_means.row(1), u);
    return std::abs(d0 - d1);
  }
  return -quad_distance(point, fb.mean, u);
}

inline std::vector<double> flat_posterior(const ModelParams& model, std::size_t k,
                                          std::span<const double> point) {
  const auto& cls = model.classifiers[k];
  std::vector<double> logits(model.config.num_classes, 0.0);
  for (std::size_t c = 0; c < logits.size(); ++c) {
    for (std::size_t j = 0; j < point.size(); ++j) logits[c] += cls.w(c, j) * point[j];
    if (cls.b.size() > 0) logits[c] += cls.b(0, c);
  }
  return softmax_flat(logits);
}

}  // namespace detail

// Mixture loss rebuilt from scratch: per meta-target, softmax weights over
// the other sources' batch statistics, -log of the blended probability of
// the true label, averaged per unit and then per meta-target.
inline double flat_moe_loss(const ToyInstance& inst) {
  const ModelParams& model = inst.model;
  const std::size_t K = inst.sources.size();
  std::vector<detail::FlatBatch> batches;
  for (const auto& b : inst.sources) batches.push_back(detail::flat_encode(model, b));

  double total = 0.0;
  for (std::size_t t = 0; t < K; ++t) {
    double batch_loss = 0.0;
    for (std::size_t i = 0; i < batches[t].hidden.rows; ++i) {
      auto point = batches[t].hidden.row(i);
      auto y = static_cast<std::size_t>(batches[t].labels[i]);
      std::vector<double> conf;
      std::vector<std::size_t> members;
      for (std::size_t l = 0; l < K; ++l) {
        if (l == t) continue;
        members.push_back(l);
        conf.push_back(detail::flat_confidence(model, l, batches[l], point));
      }
      auto alpha = detail::softmax_flat(conf);
      double q = 0.0;
      for (std::size_t m = 0; m < members.size(); ++m)
        q += alpha[m] * detail::flat_posterior(model, members[m], point)[y];
      batch_loss += -std::log(std::max(q, kProbFloor));
    }
    total += batch_loss / static_cast<double>(batches[t].hidden.rows);
  }
  return total / static_cast<double>(K);
}

// Per-source supervised loss rebuilt flat: mean cross entropy of each
// source's own head on its own batch, averaged over sources.
inline double flat_mtl_loss(const ToyInstance& inst) {
  const ModelParams& model = inst.model;
  double total = 0.0;
  for (std::size_t k = 0; k < inst.sources.size(); ++k) {
    detail::FlatBatch fb = detail::flat_encode(model, inst.sources[k]);
    double batch_loss = 0.0;
    for (std::size_t i = 0; i < fb.hidden.rows; ++i) {
      auto p = detail::flat_posterior(model, k, fb.hidden.row(i));
      auto y = static_cast<std::size_t>(fb.labels[i]);
      batch_loss += -std::log(std::max(p[y], kProbFloor));
    }
    total += batch_loss / static_cast<double>(fb.hidden.rows);
  }
  return total / static_cast<double>(inst.sources.size());
}

// Mean per-unit entropy of the all-source weights, averaged like the
// mixture loss: per unit, then per batch.
inline double flat_entropy(const ToyInstance& inst) {
  const ModelParams& model = inst.model;
  const std::size_t K = inst.sources.size();
  std::vector<detail::FlatBatch> batches;
  for (const auto& b : inst.sources) batches.push_back(detail::flat_encode(model, b));

  double total = 0.0;
  for (std::size_t t = 0; t < K; ++t) {
    double batch_sum = 0.0;
    for (std::size_t i = 0; i < batches[t].hidden.rows; ++i) {
      auto point = batches[t].hidden.row(i);
      std::vector<double> conf;
      for (std::size_t l = 0; l < K; ++l)
        conf.push_back(detail::flat_confidence(model, l, batches[l], point));
      auto alpha = detail::softmax_flat(conf);
      double h = 0.0;
      for (double a : alpha)
        if (a > 0.0) h -= a * std::log(a);
      batch_sum += h;
    }
    total += batch_sum / static_cast<double>(batches[t].hidden.rows);
  }
  return total / static_cast<double>(K);
}

}  // namespace msmoe::testsupport
