#pragma once

#include <span>
#include <vector>

#include "msmoe/metric.hpp"
#include "msmoe/model.hpp"

namespace msmoe {

struct MixtureOutput {
  std::vector<double> alpha;      // one weight per source, sums to 1
  DenseMatrix expert_posteriors;  // num_sources x num_classes
  std::vector<double> combined;   // num_classes
  int predicted = -1;             // argmax of combined, lowest index on ties
};

// Full mixture for one encoded unit, weighting every source by its
// confidence under the trained metric and statistics. A non-negative
// exclude_source drops that source from the mixture (its alpha entry and
// posterior row come back zero), which is how held-out validation scores
// a source's data against the remaining experts. A mixture with exactly
// one active source needs no metric and puts all weight on it.
MixtureOutput moe_posterior(const ModelParams& model, const std::vector<DomainStats>& stats,
                            std::span<const double> hidden, int exclude_source = -1);

// H(p) in nats; zero entries contribute zero.
double entropy(std::span<const double> dist);

struct LossBreakdown {
  double moe = 0.0;
  double mtl = 0.0;
  double adv = 0.0;
  double entropy = 0.0;  // mean per-unit H(alpha), before weighting
  double total = 0.0;
};

// lambda * moe + (1 - lambda) * mtl + gamma * adv + eta * entropy.
// lambda must lie in [0,1]; gamma and eta must be non-negative.
double joint_loss(double moe, double mtl, double adv, double entropy, double lambda, double gamma,
                  double eta);

}  // namespace msmoe
