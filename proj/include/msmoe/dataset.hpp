#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace msmoe {

// Data or file-format problem; carries the file and line where known.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TaskKind { binary_classification, sequence_tagging };

const char* task_name(TaskKind task);
TaskKind task_from_name(const std::string& name);

// One example of either task. Classification uses features/label; tagging
// uses tokens/tags. label = -1 (or empty tags) marks unlabeled data.
struct Example {
  std::vector<double> features;
  int label = -1;
  std::vector<int> tokens;
  std::vector<int> tags;
};

struct DomainDataset {
  std::string name;
  TaskKind task = TaskKind::binary_classification;
  std::size_t feature_dim = 0;
  std::vector<std::string> label_names;
  std::vector<Example> examples;

  std::size_t num_classes() const { return label_names.size(); }
  // Number of prediction units: examples for classification, tokens for tagging.
  std::size_t unit_count() const;
  bool labeled() const;
};

// Token vocabulary with reserved padding and unknown entries.
struct Vocabulary {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  std::vector<std::string> tokens{"<pad>", "<unk>"};
  std::unordered_map<std::string, int> index{{"<pad>", kPad}, {"<unk>", kUnk}};

  int lookup(const std::string& token) const;
  int add(const std::string& token);
  std::size_t size() const { return tokens.size(); }
};

// Sparse vector format: one example per line, `label idx:val idx:val ...`
// with 1-based strictly ascending indices. Labels -1/+1 map to classes
// 0/1; non-negative integers are taken as class ids directly.
// declared_dim = 0 infers the dimension from the largest index seen.
DomainDataset load_sparse(const std::string& path, const std::string& name,
                          std::size_t declared_dim = 0);
void write_sparse(const std::string& path, const DomainDataset& dataset);

// Token/tag format: `token tag` per line, blank line between sentences.
// grow_vocab/grow_tagset control whether unseen tokens/tags extend the
// maps (training sources) or map to <unk> / fail (target data).
DomainDataset load_token_tagged(const std::string& path, const std::string& name,
                                Vocabulary& vocab, bool grow_vocab,
                                std::vector<std::string>& tagset, bool grow_tagset);
void write_token_tagged(const std::string& path, const DomainDataset& dataset,
                        const Vocabulary& vocab);

// Synthetic multi-domain task. Each regular domain places its class
// clusters around a shifted center with a domain-specific label axis; the
// target draws from the regular domains' sub-regions. Outlier domains
// carry labels that are (at noise level 1) independent of the features.
struct SynthSpec {
  std::size_t num_sources = 3;
  std::size_t num_classes = 2;
  std::size_t dim = 10;
  std::size_t per_domain_n = 200;
  double domain_shift = 2.0;
  std::size_t outlier_domains = 0;
  std::size_t outlier_n = 0;  // 0 means per_domain_n
  double outlier_noise = 1.0;
  double class_sep = 2.0;
  double noise_std = 1.0;
  // Skews the target's domain mixture toward the first regular domains:
  // domain k is drawn with weight (1+skew)^(K-1-k). 0 keeps it uniform.
  double target_skew = 0.0;
  std::uint64_t seed = 0;
};

struct SynthResult {
  std::vector<DomainDataset> sources;  // regular domains then outlier domains
  std::vector<bool> is_outlier;        // parallel to sources
  DomainDataset target;
};

SynthResult synthesize(const SynthSpec& spec);

// Seeded disjoint/exhaustive split; held_fraction of the data goes to the
// second part. Stratified by label for classification, by sentence for
// tagging.
std::pair<DomainDataset, DomainDataset> split(const DomainDataset& dataset,
                                              double held_fraction,
                                              std::uint64_t seed);

// FNV-1a of a file's bytes, for run-manifest fingerprints.
std::uint64_t file_fingerprint(const std::string& path);

}  // namespace msmoe
