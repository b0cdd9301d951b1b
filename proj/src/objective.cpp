#include "msmoe/objective.hpp"

#include <cmath>
#include <stdexcept>

namespace msmoe {
namespace {

// out += s * U v  (U: h x r, v: r)
void add_matvec(const DenseMatrix& u, std::span<const double> v, double s,
                std::span<double> out) {
  for (std::size_t i = 0; i < u.rows; ++i) {
    const double* urow = u.data.data() + i * u.cols;
    double acc = 0.0;
    for (std::size_t j = 0; j < u.cols; ++j) acc += urow[j] * v[j];
    out[i] += s * acc;
  }
}

// m += s * a b^T  (a: rows of m, b: cols of m)
void add_outer(std::span<const double> a, std::span<const double> b, double s, DenseMatrix& m) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    const double sa = s * a[i];
    if (sa == 0.0) continue;
    double* mrow = m.data.data() + i * m.cols;
    for (std::size_t j = 0; j < m.cols; ++j) mrow[j] += sa * b[j];
  }
}

// Differentiable batch statistics: the per-batch stand-ins for the domain
// statistics used at prediction time.
struct BatchStats {
  std::vector<double> mean;
  DenseMatrix class_means;
  std::vector<std::size_t> class_counts;
  bool use_mcd = false;  // margin confidence possible for this batch
};

BatchStats batch_stats(const EncodedBatch& enc, const ModelConfig& cfg) {
  BatchStats s;
  const std::size_t n = enc.hidden.rows;
  const std::size_t h = enc.hidden.cols;
  s.mean.assign(h, 0.0);
  for (std::size_t i = 0; i < n; ++i) axpy(1.0, enc.hidden.row(i), s.mean);
  for (auto& x : s.mean) x /= static_cast<double>(n);

  if (cfg.confidence == ConfidenceKind::mcd) {
    s.class_means = DenseMatrix(cfg.num_classes, h);
    s.class_counts.assign(cfg.num_classes, 0);
    for (std::size_t i = 0; i < n; ++i) {
      int y = enc.labels[i];
      if (y < 0) continue;
      axpy(1.0, enc.hidden.row(i), s.class_means.row(static_cast<std::size_t>(y)));
      ++s.class_counts[static_cast<std::size_t>(y)];
    }
    s.use_mcd = true;
    for (std::size_t c = 0; c < cfg.num_classes; ++c) {
      if (s.class_counts[c] == 0) {
        // A batch missing a class cannot produce a margin; fall back to
        // plain distance for this source on this step.
        s.use_mcd = false;
        break;
      }
      for (auto& x : s.class_means.row(c)) x /= static_cast<double>(s.class_counts[c]);
    }
  }
  return s;
}

// Forward state of one confidence evaluation, kept for its backward pass.
struct ConfParts {
  double e = 0.0;
  bool mcd = false;
  double sign = 0.0;      // mcd only
  DistanceParts d0, d1;   // mcd: both class means; otherwise d0 to the mean
};

ConfParts confidence_parts(const ModelParams& model, std::size_t source, const BatchStats& stats,
                           std::span<const double> hidden) {
  const DenseMatrix& u = model.metric_for(source).u;
  ConfParts p;
  if (stats.use_mcd) {
    p.mcd = true;
    p.d0 = distance_parts(hidden, stats.class_means.row(0), u);
    p.d1 = distance_parts(hidden, stats.class_means.row(1), u);
    const double diff = p.d0.d - p.d1.d;
    p.sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    p.e = std::fabs(diff);
  } else {
    p.d0 = distance_parts(hidden, stats.mean, u);
    p.e = -p.d0.d;
  }
  return p;
}

// Pushes coeff = dL/de into the hidden vector, the metric factor, and the
// batch-mean accumulators.
void confidence_backward(const ModelParams& model, std::size_t source, const ConfParts& p,
                         double coeff, std::span<double> grad_hidden, DenseMatrix& grad_u,
                         std::vector<double>& grad_mean, DenseMatrix& grad_class_means) {
  const DenseMatrix& u = model.metric_for(source).u;
  if (p.mcd) {
    const double c0 = coeff * p.sign / p.d0.d;
    const double c1 = -coeff * p.sign / p.d1.d;
    add_matvec(u, p.d0.v, c0, grad_hidden);
    add_matvec(u, p.d1.v, c1, grad_hidden);
    add_outer(p.d0.delta, p.d0.v, c0, grad_u);
    add_outer(p.d1.delta, p.d1.v, c1, grad_u);
    add_matvec(u, p.d0.v, -c0, grad_class_means.row(0));
    add_matvec(u, p.d1.v, -c1, grad_class_means.row(1));
  } else {
    const double c = -coeff / p.d0.d;
    add_matvec(u, p.d0.v, c, grad_hidden);
    add_outer(p.d0.delta, p.d0.v, c, grad_u);
    add_matvec(u, p.d0.v, -c, grad_mean);
  }
}

DenseMatrix posterior_matrix(const DenseMatrix& hidden, const ClassifierParams& cls) {
  DenseMatrix p = matmul_nt(hidden, cls.w);
  for (std::size_t i = 0; i < p.rows; ++i) {
    auto row = p.row(i);
    if (cls.b.size() > 0)
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += cls.b(0, c);
    auto sm = softmax(row);
    std::copy(sm.begin(), sm.end(), row.begin());
  }
  return p;
}

}  // namespace

LossBreakdown compute_step_weighted(const ModelParams& model,
                                    const std::vector<std::vector<const Example*>>& sources,
                                    const std::vector<const Example*>& target,
                                    const LossWeights& w, const StepOptions& opts,
                                    ModelParams* grads) {
  const std::size_t K = sources.size();
  const std::size_t C = model.config.num_classes;
  if (K == 0) throw std::invalid_argument("compute_step: no source batches");
  if (K != model.source_names.size())
    throw std::invalid_argument("compute_step: batch count does not match model sources");
  if (w.moe < 0 || w.mtl < 0 || w.adv < 0 || w.entropy < 0)
    throw std::invalid_argument("compute_step: negative loss weight");
  if (w.moe > 0 && K < 2)
    throw std::invalid_argument("compute_step: mixture loss needs at least two sources");
  if (w.adv > 0 && target.empty())
    throw std::invalid_argument("compute_step: discrepancy term needs a target batch");
  for (const auto& batch : sources)
    if (batch.empty()) throw std::invalid_argument("compute_step: empty source batch");

  std::vector<std::size_t> meta_targets;
  if (opts.only_meta_target >= 0) {
    if (static_cast<std::size_t>(opts.only_meta_target) >= K)
      throw std::invalid_argument("compute_step: meta-target index out of range");
    meta_targets.push_back(static_cast<std::size_t>(opts.only_meta_target));
  } else {
    for (std::size_t t = 0; t < K; ++t) meta_targets.push_back(t);
  }
  const double Kt = static_cast<double>(meta_targets.size());

  std::vector<EncodedBatch> enc;
  enc.reserve(K);
  for (std::size_t k = 0; k < K; ++k) enc.push_back(encode_batch(model, sources[k]));

  const bool need_conf = w.moe > 0 || w.entropy > 0;
  std::vector<BatchStats> stats;
  if (need_conf) {
    stats.reserve(K);
    for (std::size_t k = 0; k < K; ++k) stats.push_back(batch_stats(enc[k], model.config));
  }

  std::vector<DenseMatrix> grad_hidden;
  std::vector<std::vector<double>> grad_mean;
  std::vector<DenseMatrix> grad_cmeans;
  if (grads) {
    for (std::size_t k = 0; k < K; ++k) {
      grad_hidden.emplace_back(enc[k].hidden.rows, enc[k].hidden.cols);
      grad_mean.emplace_back(model.config.hidden_dim, 0.0);
      grad_cmeans.emplace_back(C, model.config.hidden_dim);
    }
  }

  double moe_sum = 0.0, mtl_sum = 0.0, ent_sum = 0.0;
  std::vector<ConfParts> parts(K);
  std::vector<double> conf(K), coeff(K);

  for (std::size_t t : meta_targets) {
    const EncodedBatch& et = enc[t];
    const std::size_t n_t = et.hidden.rows;

    // Posterior of every needed classifier over batch t's units.
    std::vector<DenseMatrix> post(K);
    if (w.moe > 0)
      for (std::size_t l = 0; l < K; ++l)
        if (l != t) post[l] = posterior_matrix(et.hidden, model.classifiers[l]);
    if (w.mtl > 0) post[t] = posterior_matrix(et.hidden, model.classifiers[t]);

    std::vector<DenseMatrix> gz(K);
    if (grads)
      for (std::size_t l = 0; l < K; ++l)
        if (post[l].size() > 0) gz[l] = DenseMatrix(n_t, C);

    const double s_moe = w.moe / (Kt * static_cast<double>(n_t));
    const double s_mtl = w.mtl / (Kt * static_cast<double>(n_t));
    const double s_ent = w.entropy / (Kt * static_cast<double>(n_t));
    double moe_t = 0.0, mtl_t = 0.0, ent_t = 0.0;

    for (std::size_t j = 0; j < n_t; ++j) {
      auto h = et.hidden.row(j);
      const int label = et.labels[j];
      if ((w.moe > 0 || w.mtl > 0) && (label < 0 || static_cast<std::size_t>(label) >= C))
        throw std::invalid_argument("compute_step: source unit without a valid label");
      const auto y = static_cast<std::size_t>(label < 0 ? 0 : label);

      if (need_conf) {
        for (std::size_t k = 0; k < K; ++k) {
          parts[k] = confidence_parts(model, k, stats[k], h);
          conf[k] = parts[k].e;
        }
        std::fill(coeff.begin(), coeff.end(), 0.0);
      }

      if (w.moe > 0) {
        // Mixture weights over the held-out rotation's sources only.
        std::vector<double> e_meta;
        e_meta.reserve(K - 1);
        for (std::size_t l = 0; l < K; ++l)
          if (l != t) e_meta.push_back(conf[l]);
        std::vector<double> abar = softmax(e_meta);

        double q = 0.0;
        std::size_t pos = 0;
        for (std::size_t l = 0; l < K; ++l)
          if (l != t) q += abar[pos++] * post[l](j, y);
        q = std::max(q, kProbFloor);
        moe_t += -std::log(q);

        if (grads) {
          pos = 0;
          for (std::size_t l = 0; l < K; ++l) {
            if (l == t) continue;
            const double al = abar[pos++];
            const double wl = al * post[l](j, y) / q;
            coeff[l] += s_moe * (al - wl);
            const double gscale = s_moe * wl;
            auto gzrow = gz[l].row(j);
            for (std::size_t c = 0; c < C; ++c)
              gzrow[c] += gscale * (post[l](j, c) - (c == y ? 1.0 : 0.0));
          }
        }
      }

      if (w.entropy > 0) {
        std::vector<double> alpha = softmax(conf);
        double hval = entropy(alpha);
        ent_t += hval;
        if (grads)
          for (std::size_t k = 0; k < K; ++k)
            coeff[k] += s_ent * (-alpha[k] * (std::log(alpha[k]) + hval));
      }

      if (w.mtl > 0) {
        mtl_t += cross_entropy(post[t].row(j), y);
        if (grads) {
          auto gzrow = gz[t].row(j);
          for (std::size_t c = 0; c < C; ++c)
            gzrow[c] += s_mtl * (post[t](j, c) - (c == y ? 1.0 : 0.0));
        }
      }

      if (grads && need_conf) {
        for (std::size_t k = 0; k < K; ++k) {
          if (coeff[k] == 0.0) continue;
          confidence_backward(model, k, parts[k], coeff[k], grad_hidden[t].row(j),
                              grads->metrics[model.metric_index(k)].u, grad_mean[k],
                              grad_cmeans[k]);
        }
      }
    }

    moe_sum += moe_t / static_cast<double>(n_t);
    mtl_sum += mtl_t / static_cast<double>(n_t);
    ent_sum += ent_t / static_cast<double>(n_t);

    if (grads) {
      for (std::size_t l = 0; l < K; ++l) {
        if (gz[l].size() == 0) continue;
        add_matmul_tn(gz[l], et.hidden, grads->classifiers[l].w);
        if (grads->classifiers[l].b.size() > 0)
          for (std::size_t j = 0; j < gz[l].rows; ++j)
            axpy(1.0, gz[l].row(j), grads->classifiers[l].b.row(0));
        add_matmul(gz[l], model.classifiers[l].w, grad_hidden[t]);
      }
    }
  }

  double adv_val = 0.0;
  if (w.adv > 0) {
    EncodedBatch enc_target = encode_batch(model, target);
    std::size_t pooled_rows = 0;
    for (const auto& e : enc) pooled_rows += e.hidden.rows;
    DenseMatrix pooled(pooled_rows, model.config.hidden_dim);
    std::size_t at = 0;
    for (const auto& e : enc)
      for (std::size_t i = 0; i < e.hidden.rows; ++i, ++at)
        std::copy(e.hidden.row(i).begin(), e.hidden.row(i).end(), pooled.row(at).begin());

    adv_val = mmd_squared(pooled, enc_target.hidden, opts.kernels);
    if (grads) {
      DenseMatrix grad_pooled(pooled.rows, pooled.cols);
      DenseMatrix grad_target(enc_target.hidden.rows, enc_target.hidden.cols);
      mmd_gradient(pooled, enc_target.hidden, opts.kernels, w.adv, grad_pooled, grad_target);
      at = 0;
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t i = 0; i < enc[k].hidden.rows; ++i, ++at)
          axpy(1.0, grad_pooled.row(at), grad_hidden[k].row(i));
      encoder_backward(model, enc_target, grad_target, *grads);
    }
  }

  if (grads) {
    if (need_conf && !opts.stop_gradient_on_means) {
      // Batch means are functions of the same encodings; spread their
      // gradients back over the rows that formed them.
      for (std::size_t k = 0; k < K; ++k) {
        const std::size_t n_k = enc[k].hidden.rows;
        bool mean_used = false;
        for (double g : grad_mean[k])
          if (g != 0.0) {
            mean_used = true;
            break;
          }
        if (mean_used) {
          const double inv = 1.0 / static_cast<double>(n_k);
          for (std::size_t i = 0; i < n_k; ++i)
            axpy(inv, grad_mean[k], grad_hidden[k].row(i));
        }
        if (stats[k].use_mcd) {
          for (std::size_t i = 0; i < n_k; ++i) {
            int y = enc[k].labels[i];
            if (y < 0) continue;
            const auto c = static_cast<std::size_t>(y);
            axpy(1.0 / static_cast<double>(stats[k].class_counts[c]), grad_cmeans[k].row(c),
                 grad_hidden[k].row(i));
          }
        }
      }
    }
    for (std::size_t k = 0; k < K; ++k) encoder_backward(model, enc[k], grad_hidden[k], *grads);
  }

  LossBreakdown out;
  out.moe = moe_sum / Kt;
  out.mtl = mtl_sum / Kt;
  out.adv = adv_val;
  out.entropy = ent_sum / Kt;
  out.total = w.moe * out.moe + w.mtl * out.mtl + w.adv * out.adv + w.entropy * out.entropy;
  if (!std::isfinite(out.total))
    throw NumericError("compute_step: loss is not finite");
  return out;
}

LossBreakdown compute_step(const ModelParams& model,
                           const std::vector<std::vector<const Example*>>& sources,
                           const std::vector<const Example*>& target, const StepOptions& opts,
                           ModelParams* grads) {
  LossWeights w;
  w.moe = opts.lambda;
  w.mtl = 1.0 - opts.lambda;
  w.adv = opts.gamma;
  w.entropy = opts.eta;
  if (opts.lambda < 0.0 || opts.lambda > 1.0)
    throw std::invalid_argument("compute_step: lambda must lie in [0,1]");
  return compute_step_weighted(model, sources, target, w, opts, grads);
}

}  // namespace msmoe
