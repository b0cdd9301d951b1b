#include "msmoe/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "msmoe/rng.hpp"

namespace msmoe {
namespace {

[[noreturn]] void fail(const std::string& path, std::size_t line, const std::string& what) {
  throw ParseError(path + ":" + std::to_string(line) + ": " + what);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Unit-norm gaussian direction.
std::vector<double> random_direction(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (auto& x : v) {
      x = rng.gaussian();
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

std::vector<double> normalized_sum(const std::vector<double>& a, const std::vector<double>& b,
                                   double scale_b) {
  std::vector<double> v(a.size());
  double norm = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    v[i] = a[i] + scale_b * b[i];
    norm += v[i] * v[i];
  }
  norm = std::sqrt(norm);
  if (norm == 0.0) return a;
  for (auto& x : v) x /= norm;
  return v;
}

}  // namespace

const char* task_name(TaskKind task) {
  return task == TaskKind::binary_classification ? "binary_classification" : "sequence_tagging";
}

TaskKind task_from_name(const std::string& name) {
  if (name == "binary_classification") return TaskKind::binary_classification;
  if (name == "sequence_tagging") return TaskKind::sequence_tagging;
  throw ParseError("unknown task kind: " + name);
}

std::size_t DomainDataset::unit_count() const {
  if (task == TaskKind::binary_classification) return examples.size();
  std::size_t n = 0;
  for (const auto& ex : examples) n += ex.tokens.size();
  return n;
}

bool DomainDataset::labeled() const {
  if (examples.empty()) return false;
  for (const auto& ex : examples) {
    if (task == TaskKind::binary_classification) {
      if (ex.label < 0) return false;
    } else {
      if (ex.tags.size() != ex.tokens.size()) return false;
      for (int t : ex.tags)
        if (t < 0) return false;
    }
  }
  return true;
}

int Vocabulary::lookup(const std::string& token) const {
  auto it = index.find(token);
  return it == index.end() ? kUnk : it->second;
}

int Vocabulary::add(const std::string& token) {
  auto it = index.find(token);
  if (it != index.end()) return it->second;
  int id = static_cast<int>(tokens.size());
  tokens.push_back(token);
  index.emplace(token, id);
  return id;
}

DomainDataset load_sparse(const std::string& path, const std::string& name,
                          std::size_t declared_dim) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open");

  DomainDataset ds;
  ds.name = name;
  ds.task = TaskKind::binary_classification;

  std::vector<long long> raw_labels;
  bool saw_minus_one = false;
  long long max_label = -1;
  std::size_t max_index = 0;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string tok;
    if (!(ss >> tok)) continue;  // blank line

    long long raw = 0;
    if (tok == "?") {
      raw = std::numeric_limits<long long>::min();  // unlabeled marker
    } else {
      std::size_t pos = 0;
      try {
        raw = std::stoll(tok, &pos);
      } catch (const std::exception&) {
        fail(path, line_no, "bad label '" + tok + "'");
      }
      if (pos != tok.size()) fail(path, line_no, "bad label '" + tok + "'");
      if (raw == -1) {
        saw_minus_one = true;
      } else if (raw < 0) {
        fail(path, line_no, "labels must be -1/+1 or non-negative class ids");
      }
      max_label = std::max(max_label, raw);
    }

    Example ex;
    std::size_t prev_index = 0;
    std::vector<std::pair<std::size_t, double>> entries;
    while (ss >> tok) {
      auto colon = tok.find(':');
      if (colon == std::string::npos) fail(path, line_no, "expected index:value, got '" + tok + "'");
      std::size_t idx = 0;
      double val = 0.0;
      try {
        std::size_t pos = 0;
        long long signed_idx = std::stoll(tok.substr(0, colon), &pos);
        if (pos != colon || signed_idx < 1) throw std::invalid_argument("index");
        idx = static_cast<std::size_t>(signed_idx);
        std::string vs = tok.substr(colon + 1);
        val = std::stod(vs, &pos);
        if (pos != vs.size()) throw std::invalid_argument("value");
      } catch (const std::exception&) {
        fail(path, line_no, "bad feature entry '" + tok + "'");
      }
      if (idx <= prev_index) fail(path, line_no, "feature indices must be strictly ascending");
      if (declared_dim != 0 && idx > declared_dim)
        fail(path, line_no, "feature index " + std::to_string(idx) + " exceeds dimension " +
                                std::to_string(declared_dim));
      prev_index = idx;
      entries.emplace_back(idx, val);
    }
    max_index = std::max(max_index, prev_index);
    // Keep the sparse pairs interleaved until the dimension is known.
    ex.features.reserve(entries.size() * 2);
    for (auto& [i, v] : entries) {
      ex.features.push_back(static_cast<double>(i));
      ex.features.push_back(v);
    }
    ds.examples.push_back(std::move(ex));
    raw_labels.push_back(raw);
  }
  if (ds.examples.empty()) throw ParseError(path + ": no examples");

  ds.feature_dim = declared_dim != 0 ? declared_dim : max_index;
  if (ds.feature_dim == 0) throw ParseError(path + ": no feature indices and no declared dimension");

  // Densify now that the dimension is fixed.
  for (auto& ex : ds.examples) {
    std::vector<double> dense(ds.feature_dim, 0.0);
    for (std::size_t i = 0; i + 1 < ex.features.size(); i += 2)
      dense[static_cast<std::size_t>(ex.features[i]) - 1] = ex.features[i + 1];
    ex.features = std::move(dense);
  }

  constexpr long long kUnlabeled = std::numeric_limits<long long>::min();
  if (saw_minus_one) {
    // -1/+1 convention: anything else is a mixed file.
    for (std::size_t i = 0; i < raw_labels.size(); ++i) {
      long long raw = raw_labels[i];
      if (raw == kUnlabeled) continue;
      if (raw != -1 && raw != 1)
        throw ParseError(path + ": label " + std::to_string(raw) +
                         " mixes -1/+1 and class-id conventions");
      ds.examples[i].label = raw == 1 ? 1 : 0;
    }
    ds.label_names = {"-1", "+1"};
  } else {
    for (std::size_t i = 0; i < raw_labels.size(); ++i) {
      long long raw = raw_labels[i];
      if (raw == kUnlabeled) continue;
      ds.examples[i].label = static_cast<int>(raw);
    }
    if (max_label >= 0) {
      for (long long c = 0; c <= max_label; ++c) ds.label_names.push_back(std::to_string(c));
    }
  }

  // A dataset is either fully labeled or fully unlabeled.
  bool any_labeled = false, any_unlabeled = false;
  for (long long raw : raw_labels) (raw == kUnlabeled ? any_unlabeled : any_labeled) = true;
  if (any_labeled && any_unlabeled)
    throw ParseError(path + ": mixes labeled and unlabeled examples");
  return ds;
}

void write_sparse(const std::string& path, const DomainDataset& dataset) {
  if (dataset.task != TaskKind::binary_classification)
    throw std::invalid_argument("write_sparse: classification datasets only");
  std::ofstream out(path);
  if (!out) throw ParseError(path + ": cannot open for writing");
  bool pm_one = dataset.label_names == std::vector<std::string>{"-1", "+1"};
  for (const auto& ex : dataset.examples) {
    if (ex.label < 0) {
      out << '?';
    } else if (pm_one) {
      out << (ex.label == 1 ? "+1" : "-1");
    } else {
      out << ex.label;
    }
    for (std::size_t i = 0; i < ex.features.size(); ++i) {
      if (ex.features[i] == 0.0) continue;
      out << ' ' << (i + 1) << ':' << format_double(ex.features[i]);
    }
    out << '\n';
  }
  if (!out) throw ParseError(path + ": write failed");
}

DomainDataset load_token_tagged(const std::string& path, const std::string& name,
                                Vocabulary& vocab, bool grow_vocab,
                                std::vector<std::string>& tagset, bool grow_tagset) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open");

  DomainDataset ds;
  ds.name = name;
  ds.task = TaskKind::sequence_tagging;

  auto tag_id = [&](const std::string& tag, std::size_t line_no) -> int {
    auto it = std::find(tagset.begin(), tagset.end(), tag);
    if (it != tagset.end()) return static_cast<int>(it - tagset.begin());
    if (!grow_tagset) fail(path, line_no, "unknown tag '" + tag + "'");
    tagset.push_back(tag);
    return static_cast<int>(tagset.size() - 1);
  };

  Example sentence;
  std::string line;
  std::size_t line_no = 0;
  auto flush = [&] {
    if (!sentence.tokens.empty()) ds.examples.push_back(std::move(sentence));
    sentence = Example{};
  };
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string token, tag, extra;
    if (!(ss >> token)) {
      flush();
      continue;
    }
    bool has_tag = static_cast<bool>(ss >> tag);
    if (ss >> extra) fail(path, line_no, "expected 'token tag', got extra field '" + extra + "'");
    sentence.tokens.push_back(grow_vocab ? vocab.add(token) : vocab.lookup(token));
    if (has_tag && tag != "?") {
      sentence.tags.push_back(tag_id(tag, line_no));
    } else {
      sentence.tags.push_back(-1);
    }
  }
  flush();
  if (ds.examples.empty()) throw ParseError(path + ": no sentences");

  bool any_labeled = false, any_unlabeled = false;
  for (const auto& ex : ds.examples)
    for (int t : ex.tags) (t < 0 ? any_unlabeled : any_labeled) = true;
  if (any_labeled && any_unlabeled)
    throw ParseError(path + ": mixes tagged and untagged tokens");

  ds.label_names = tagset;
  return ds;
}

void write_token_tagged(const std::string& path, const DomainDataset& dataset,
                        const Vocabulary& vocab) {
  if (dataset.task != TaskKind::sequence_tagging)
    throw std::invalid_argument("write_token_tagged: tagging datasets only");
  std::ofstream out(path);
  if (!out) throw ParseError(path + ": cannot open for writing");
  for (std::size_t s = 0; s < dataset.examples.size(); ++s) {
    const auto& ex = dataset.examples[s];
    for (std::size_t i = 0; i < ex.tokens.size(); ++i) {
      out << vocab.tokens.at(static_cast<std::size_t>(ex.tokens[i]));
      int tag = i < ex.tags.size() ? ex.tags[i] : -1;
      out << ' ' << (tag >= 0 ? dataset.label_names.at(static_cast<std::size_t>(tag)) : "?");
      out << '\n';
    }
    if (s + 1 < dataset.examples.size()) out << '\n';
  }
  if (!out) throw ParseError(path + ": write failed");
}

SynthResult synthesize(const SynthSpec& spec) {
  if (spec.num_sources < 2) throw std::invalid_argument("synthesize: need at least two sources");
  if (spec.num_classes < 2) throw std::invalid_argument("synthesize: need at least two classes");
  if (spec.per_domain_n < 2 * spec.num_classes)
    throw std::invalid_argument("synthesize: per_domain_n must be at least twice the class count");
  if (spec.dim == 0) throw std::invalid_argument("synthesize: dim must be positive");
  if (spec.outlier_noise < 0.0 || spec.outlier_noise > 1.0)
    throw std::invalid_argument("synthesize: outlier_noise must lie in [0,1]");
  if (spec.target_skew < 0.0)
    throw std::invalid_argument("synthesize: target_skew must be non-negative");

  Rng root(spec.seed);
  Rng geometry = root.fork("geometry");

  std::size_t num_domains = spec.num_sources + spec.outlier_domains;
  std::size_t C = spec.num_classes;

  // Shared class geometry, perturbed per domain so that domain_shift = 0
  // collapses every domain onto the same distribution.
  std::vector<std::vector<double>> base_axis(C);
  if (C == 2) {
    base_axis[1] = random_direction(geometry, spec.dim);
    base_axis[0] = base_axis[1];
    for (auto& x : base_axis[0]) x = -x;
  } else {
    for (auto& axis : base_axis) axis = random_direction(geometry, spec.dim);
  }

  // means[k][y]: cluster center of class y in domain k. Outlier domain j
  // shadows regular domain j mod K from two thirds of its radius: a rogue
  // source is a threat when it contaminates a clean domain's neighborhood,
  // not when it is trivially far from everything, and a fixed radial
  // offset keeps that threat comparable across seeds.
  std::vector<std::vector<std::vector<double>>> means(num_domains);
  std::vector<std::vector<double>> regular_center(spec.num_sources);
  for (std::size_t k = 0; k < num_domains; ++k) {
    std::vector<double> center;
    if (k < spec.num_sources) {
      center = random_direction(geometry, spec.dim);
      regular_center[k] = center;
      for (auto& x : center) x *= spec.domain_shift;
    } else {
      center = regular_center[(k - spec.num_sources) % spec.num_sources];
      for (auto& x : center) x *= 0.65 * spec.domain_shift;
    }
    means[k].resize(C);
    for (std::size_t y = 0; y < C; ++y) {
      auto axis = normalized_sum(base_axis[y], random_direction(geometry, spec.dim),
                                 spec.domain_shift);
      means[k][y].resize(spec.dim);
      for (std::size_t d = 0; d < spec.dim; ++d)
        means[k][y][d] = center[d] + 0.5 * spec.class_sep * axis[d];
    }
  }

  std::vector<std::string> label_names;
  for (std::size_t c = 0; c < C; ++c) label_names.push_back(std::to_string(c));

  auto make_domain = [&](const std::string& name, std::size_t k, std::size_t n,
                         Rng rng) {
    DomainDataset ds;
    ds.name = name;
    ds.task = TaskKind::binary_classification;
    ds.feature_dim = spec.dim;
    ds.label_names = label_names;
    ds.examples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      Example ex;
      std::size_t y = rng.uniform_index(C);
      ex.label = static_cast<int>(y);
      ex.features.resize(spec.dim);
      for (std::size_t d = 0; d < spec.dim; ++d)
        ex.features[d] = means[k][y][d] + spec.noise_std * rng.gaussian();
      ds.examples.push_back(std::move(ex));
    }
    return ds;
  };

  SynthResult result;
  for (std::size_t k = 0; k < spec.num_sources; ++k) {
    result.sources.push_back(
        make_domain("s" + std::to_string(k), k, spec.per_domain_n, root.fork("source:" + std::to_string(k))));
    result.is_outlier.push_back(false);
  }
  std::size_t outlier_n = spec.outlier_n != 0 ? spec.outlier_n : spec.per_domain_n;
  for (std::size_t j = 0; j < spec.outlier_domains; ++j) {
    std::size_t k = spec.num_sources + j;
    auto ds = make_domain("outlier" + std::to_string(j), k, outlier_n,
                          root.fork("outlier:" + std::to_string(j)));
    Rng noise = root.fork("outlier_labels:" + std::to_string(j));
    for (auto& ex : ds.examples) {
      if (noise.uniform() < spec.outlier_noise)
        ex.label = static_cast<int>(noise.uniform_index(C));
    }
    result.sources.push_back(std::move(ds));
    result.is_outlier.push_back(true);
  }

  // Target: a mixture over the regular domains' class clusters, so each
  // regular source is the best expert on its own sub-region.
  Rng trng = root.fork("target");
  result.target.name = "target";
  result.target.task = TaskKind::binary_classification;
  result.target.feature_dim = spec.dim;
  result.target.label_names = label_names;
  result.target.examples.reserve(spec.per_domain_n);
  std::vector<double> cum(spec.num_sources, 0.0);
  if (spec.target_skew > 0.0) {
    double total = 0.0;
    for (std::size_t k = 0; k < spec.num_sources; ++k) {
      total += std::pow(1.0 + spec.target_skew,
                        static_cast<double>(spec.num_sources - 1 - k));
      cum[k] = total;
    }
    for (auto& c : cum) c /= total;
  }
  for (std::size_t i = 0; i < spec.per_domain_n; ++i) {
    std::size_t k;
    if (spec.target_skew > 0.0) {
      double u = trng.uniform();
      k = spec.num_sources - 1;
      for (std::size_t j = 0; j < spec.num_sources; ++j)
        if (u < cum[j]) {
          k = j;
          break;
        }
    } else {
      k = trng.uniform_index(spec.num_sources);
    }
    std::size_t y = trng.uniform_index(C);
    Example ex;
    ex.label = static_cast<int>(y);
    ex.features.resize(spec.dim);
    for (std::size_t d = 0; d < spec.dim; ++d)
      ex.features[d] = means[k][y][d] + spec.noise_std * trng.gaussian();
    result.target.examples.push_back(std::move(ex));
  }
  return result;
}

std::pair<DomainDataset, DomainDataset> split(const DomainDataset& dataset, double held_fraction,
                                              std::uint64_t seed) {
  if (!(held_fraction > 0.0 && held_fraction < 1.0))
    throw std::invalid_argument("split: held_fraction must lie in (0,1)");

  DomainDataset kept;
  kept.name = dataset.name;
  kept.task = dataset.task;
  kept.feature_dim = dataset.feature_dim;
  kept.label_names = dataset.label_names;
  DomainDataset held = kept;

  std::size_t n = dataset.examples.size();
  std::size_t total_held =
      static_cast<std::size_t>(std::llround(held_fraction * static_cast<double>(n)));
  if (total_held == 0 || total_held == n)
    throw std::invalid_argument("split: fraction leaves one part empty");

  Rng rng(seed);
  std::vector<char> to_held(n, 0);

  if (dataset.task == TaskKind::binary_classification) {
    // Stratified by label (unlabeled examples form their own stratum), with
    // largest-remainder rounding so per-class counts sum to the total.
    std::unordered_map<int, std::vector<std::size_t>> strata;
    for (std::size_t i = 0; i < n; ++i) strata[dataset.examples[i].label].push_back(i);
    std::vector<int> keys;
    for (auto& [label, _] : strata) keys.push_back(label);
    std::sort(keys.begin(), keys.end());

    std::vector<std::size_t> base(keys.size());
    std::vector<double> remainder(keys.size());
    std::size_t assigned = 0;
    for (std::size_t s = 0; s < keys.size(); ++s) {
      double exact = held_fraction * static_cast<double>(strata[keys[s]].size());
      base[s] = static_cast<std::size_t>(exact);
      remainder[s] = exact - static_cast<double>(base[s]);
      assigned += base[s];
    }
    std::vector<std::size_t> order(keys.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t s = 0; s < order.size() && assigned < total_held; ++s) {
      if (base[order[s]] < strata[keys[order[s]]].size()) {
        ++base[order[s]];
        ++assigned;
      }
    }
    for (std::size_t s = 0; s < keys.size(); ++s) {
      auto& idx = strata[keys[s]];
      rng.shuffle(idx);
      for (std::size_t i = 0; i < base[s]; ++i) to_held[idx[i]] = 1;
    }
  } else {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    rng.shuffle(idx);
    for (std::size_t i = 0; i < total_held; ++i) to_held[idx[i]] = 1;
  }

  for (std::size_t i = 0; i < n; ++i)
    (to_held[i] ? held : kept).examples.push_back(dataset.examples[i]);
  return {std::move(kept), std::move(held)};
}

std::uint64_t file_fingerprint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path + ": cannot open");
  std::uint64_t h = 1469598103934665603ull;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
    if (!in) break;
  }
  return h;
}

}  // namespace msmoe
