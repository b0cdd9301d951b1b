#pragma once

#include <vector>

#include "msmoe/matrix.hpp"
#include "msmoe/model.hpp"

namespace msmoe {

// Forward-pass state needed to push gradients back through the encoder.
struct EncodeCache {
  bool valid = false;
  DenseMatrix input;  // n_units x encoder_input_dim
  // Tagging only: token id feeding each window slot of each unit, used to
  // scatter gradients into embedding rows. Padding slots hold kPad.
  std::vector<std::vector<int>> window_tokens;
};

// One encoded batch. A unit is an example for classification and a token
// for tagging; tagging units appear sentence by sentence, left to right.
struct EncodedBatch {
  DenseMatrix hidden;      // n_units x hidden_dim, after ReLU
  std::vector<int> labels; // per unit, -1 when unlabeled
  EncodeCache cache;
};

EncodedBatch encode_batch(const ModelParams& model, const std::vector<const Example*>& batch);

// Accumulates encoder gradients for d(loss)/d(hidden). The batch must
// still carry its forward cache.
void encoder_backward(const ModelParams& model, const EncodedBatch& batch,
                      const DenseMatrix& grad_hidden, ModelParams& grads);

// softmax(W h (+ b)) for one source's classification head.
std::vector<double> expert_posterior(const ModelParams& model, std::size_t source,
                                     std::span<const double> hidden);

}  // namespace msmoe
