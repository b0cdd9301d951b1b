#include "msmoe/encoder.hpp"

#include <stdexcept>

#include "msmoe/numerics.hpp"

namespace msmoe {
namespace {

const DenseMatrix& encoder_w1(const ModelParams& model) {
  if (auto* mlp = std::get_if<MlpEncoderParams>(&model.encoder)) return mlp->w1;
  return std::get<TokenEncoderParams>(model.encoder).w1;
}

const DenseMatrix& encoder_b1(const ModelParams& model) {
  if (auto* mlp = std::get_if<MlpEncoderParams>(&model.encoder)) return mlp->b1;
  return std::get<TokenEncoderParams>(model.encoder).b1;
}

}  // namespace

EncodedBatch encode_batch(const ModelParams& model, const std::vector<const Example*>& batch) {
  if (batch.empty()) throw std::invalid_argument("encode_batch: empty batch");
  const ModelConfig& cfg = model.config;

  EncodedBatch out;
  if (cfg.task == TaskKind::binary_classification) {
    out.cache.input = DenseMatrix(batch.size(), cfg.input_dim);
    out.labels.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const Example& ex = *batch[i];
      if (ex.features.size() != cfg.input_dim)
        throw std::invalid_argument("encode_batch: example has " +
                                    std::to_string(ex.features.size()) + " features, expected " +
                                    std::to_string(cfg.input_dim));
      std::copy(ex.features.begin(), ex.features.end(), out.cache.input.row(i).begin());
      out.labels.push_back(ex.label);
    }
  } else {
    const auto& enc = std::get<TokenEncoderParams>(model.encoder);
    std::size_t units = 0;
    for (const Example* ex : batch) units += ex->tokens.size();
    if (units == 0) throw std::invalid_argument("encode_batch: batch has no tokens");

    const std::size_t window = 2 * cfg.window_radius + 1;
    out.cache.input = DenseMatrix(units, cfg.embed_dim * window);
    out.cache.window_tokens.assign(units, std::vector<int>(window, Vocabulary::kPad));
    out.labels.reserve(units);

    std::size_t u = 0;
    for (const Example* ex : batch) {
      const auto n = static_cast<std::ptrdiff_t>(ex->tokens.size());
      for (std::ptrdiff_t t = 0; t < n; ++t, ++u) {
        auto row = out.cache.input.row(u);
        for (std::size_t s = 0; s < window; ++s) {
          std::ptrdiff_t pos = t + static_cast<std::ptrdiff_t>(s) -
                               static_cast<std::ptrdiff_t>(cfg.window_radius);
          int tok = Vocabulary::kPad;
          if (pos >= 0 && pos < n) {
            tok = ex->tokens[static_cast<std::size_t>(pos)];
            if (tok < 0 || static_cast<std::size_t>(tok) >= cfg.vocab_size)
              throw std::invalid_argument("encode_batch: token id out of range");
          }
          out.cache.window_tokens[u][s] = tok;
          auto emb = enc.embedding.row(static_cast<std::size_t>(tok));
          std::copy(emb.begin(), emb.end(), row.begin() + static_cast<std::ptrdiff_t>(s * cfg.embed_dim));
        }
        out.labels.push_back(t < static_cast<std::ptrdiff_t>(ex->tags.size())
                                 ? ex->tags[static_cast<std::size_t>(t)]
                                 : -1);
      }
    }
  }

  out.hidden = matmul_nt(out.cache.input, encoder_w1(model));
  const DenseMatrix& b1 = encoder_b1(model);
  for (std::size_t i = 0; i < out.hidden.rows; ++i) {
    auto row = out.hidden.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) {
      double v = row[j] + b1(0, j);
      row[j] = v > 0.0 ? v : 0.0;
    }
  }
  out.cache.valid = true;
  return out;
}

void encoder_backward(const ModelParams& model, const EncodedBatch& batch,
                      const DenseMatrix& grad_hidden, ModelParams& grads) {
  if (!batch.cache.valid) throw std::logic_error("encoder_backward: batch has no forward cache");
  if (!grad_hidden.same_shape(batch.hidden))
    throw std::invalid_argument("encoder_backward: gradient shape mismatch");

  // ReLU gate: hidden > 0 iff the pre-activation was positive.
  DenseMatrix grad_pre = grad_hidden;
  for (std::size_t i = 0; i < grad_pre.size(); ++i)
    if (batch.hidden.data[i] <= 0.0) grad_pre.data[i] = 0.0;

  const bool tagging = model.config.task == TaskKind::sequence_tagging;
  DenseMatrix* gw1 = nullptr;
  DenseMatrix* gb1 = nullptr;
  DenseMatrix* gemb = nullptr;
  if (auto* mlp = std::get_if<MlpEncoderParams>(&grads.encoder)) {
    gw1 = &mlp->w1;
    gb1 = &mlp->b1;
  } else {
    auto& tok = std::get<TokenEncoderParams>(grads.encoder);
    gw1 = &tok.w1;
    gb1 = &tok.b1;
    gemb = &tok.embedding;
  }

  add_matmul_tn(grad_pre, batch.cache.input, *gw1);
  for (std::size_t i = 0; i < grad_pre.rows; ++i)
    axpy(1.0, grad_pre.row(i), gb1->row(0));

  if (tagging) {
    const std::size_t embed_dim = model.config.embed_dim;
    DenseMatrix grad_input = matmul(grad_pre, encoder_w1(model));
    for (std::size_t u = 0; u < grad_input.rows; ++u) {
      auto row = grad_input.row(u);
      const auto& toks = batch.cache.window_tokens[u];
      for (std::size_t s = 0; s < toks.size(); ++s) {
        if (toks[s] == Vocabulary::kPad) continue;  // padding row stays zero
        axpy(1.0, row.subspan(s * embed_dim, embed_dim),
             gemb->row(static_cast<std::size_t>(toks[s])));
      }
    }
  }
}

std::vector<double> expert_posterior(const ModelParams& model, std::size_t source,
                                     std::span<const double> hidden) {
  const ClassifierParams& cls = model.classifiers.at(source);
  std::vector<double> logits(cls.w.rows);
  for (std::size_t c = 0; c < cls.w.rows; ++c) {
    logits[c] = dot(cls.w.row(c), hidden);
    if (cls.b.size() > 0) logits[c] += cls.b(0, c);
  }
  return softmax(logits);
}

}  // namespace msmoe
