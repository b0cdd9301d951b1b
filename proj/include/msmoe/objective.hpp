#pragma once

#include <vector>

#include "msmoe/encoder.hpp"
#include "msmoe/mmd.hpp"
#include "msmoe/moe.hpp"

namespace msmoe {

struct StepOptions {
  double lambda = 0.5;  // balance between mixture and per-source supervision
  double gamma = 0.0;   // discrepancy weight; 0 disables the target term
  double eta = 0.01;    // entropy weight
  // Treat batch means as constants in the backward pass.
  bool stop_gradient_on_means = false;
  // Restrict the held-out rotation to one source index; -1 rotates all.
  int only_meta_target = -1;
  KernelBank kernels = default_kernel_bank();
};

// Direct per-component weights; the lambda/gamma/eta form maps onto this.
// Tests use it to isolate a single loss surface.
struct LossWeights {
  double moe = 0.0;
  double mtl = 0.0;
  double adv = 0.0;
  double entropy = 0.0;
};

// One fused forward/backward pass over a batch from every source plus an
// optional unlabeled target batch. Rotating over meta-targets t, it
// scores batch t's units against the other sources' batch statistics,
// accumulating the mixture loss, each source's own supervised loss, the
// entropy of the all-source mixture weights, and the encoder-space
// discrepancy between the pooled sources and the target.
//
// Returns unweighted component means; .total is the weighted sum. When
// grads is non-null, weighted gradients are accumulated into it.
LossBreakdown compute_step_weighted(const ModelParams& model,
                                    const std::vector<std::vector<const Example*>>& sources,
                                    const std::vector<const Example*>& target,
                                    const LossWeights& weights, const StepOptions& opts,
                                    ModelParams* grads);

// weights = {moe: lambda, mtl: 1 - lambda, adv: gamma, entropy: eta}.
LossBreakdown compute_step(const ModelParams& model,
                           const std::vector<std::vector<const Example*>>& sources,
                           const std::vector<const Example*>& target, const StepOptions& opts,
                           ModelParams* grads);

}  // namespace msmoe
