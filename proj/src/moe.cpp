#include "msmoe/moe.hpp"

#include <cmath>
#include <stdexcept>

#include "msmoe/encoder.hpp"

namespace msmoe {

MixtureOutput moe_posterior(const ModelParams& model, const std::vector<DomainStats>& stats,
                            std::span<const double> hidden, int exclude_source) {
  const std::size_t K = model.source_names.size();
  if (stats.size() != K)
    throw std::invalid_argument("moe_posterior: statistics do not cover every source");
  if (exclude_source >= static_cast<int>(K))
    throw std::invalid_argument("moe_posterior: excluded source out of range");

  std::vector<std::size_t> active;
  for (std::size_t k = 0; k < K; ++k)
    if (static_cast<int>(k) != exclude_source) active.push_back(k);
  if (active.empty()) throw std::invalid_argument("moe_posterior: no active source");

  MixtureOutput out;
  out.alpha.assign(K, 0.0);
  if (active.size() == 1) {
    out.alpha[active[0]] = 1.0;
  } else {
    std::vector<double> conf(active.size());
    for (std::size_t i = 0; i < active.size(); ++i)
      conf[i] = source_confidence(model, active[i], stats[active[i]], hidden);
    auto norm = normalize_alpha(conf);
    for (std::size_t i = 0; i < active.size(); ++i) out.alpha[active[i]] = norm[i];
  }

  const std::size_t C = model.config.num_classes;
  out.expert_posteriors = DenseMatrix(K, C);
  out.combined.assign(C, 0.0);
  for (std::size_t k : active) {
    auto post = expert_posterior(model, k, hidden);
    for (std::size_t c = 0; c < C; ++c) {
      out.expert_posteriors(k, c) = post[c];
      out.combined[c] += out.alpha[k] * post[c];
    }
  }
  out.predicted = 0;
  for (std::size_t c = 1; c < C; ++c)
    if (out.combined[c] > out.combined[static_cast<std::size_t>(out.predicted)])
      out.predicted = static_cast<int>(c);
  return out;
}

double entropy(std::span<const double> dist) {
  double h = 0.0;
  for (double p : dist) {
    if (p < 0.0) throw std::invalid_argument("entropy: negative probability");
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

double joint_loss(double moe, double mtl, double adv, double entropy, double lambda, double gamma,
                  double eta) {
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw std::invalid_argument("joint_loss: lambda must lie in [0,1]");
  if (!(gamma >= 0.0)) throw std::invalid_argument("joint_loss: gamma must be non-negative");
  if (!(eta >= 0.0)) throw std::invalid_argument("joint_loss: eta must be non-negative");
  return lambda * moe + (1.0 - lambda) * mtl + gamma * adv + eta * entropy;
}

}  // namespace msmoe
