#include "msmoe/model.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace msmoe {
namespace {

using nlohmann::json;

void fill_gaussian(DenseMatrix& m, double std_dev, Rng rng) {
  for (auto& x : m.data) x = std_dev * rng.gaussian();
}

json tensor_to_json(const DenseMatrix& m) {
  return json{{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}};
}

DenseMatrix tensor_from_json(const json& j) {
  DenseMatrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
  auto data = j.at("data").get<std::vector<double>>();
  if (data.size() != m.data.size())
    throw ParseError("checkpoint tensor has " + std::to_string(data.size()) +
                     " values for shape " + std::to_string(m.rows) + "x" +
                     std::to_string(m.cols));
  m.data = std::move(data);
  return m;
}

void validate(const ModelConfig& c) {
  if (c.hidden_dim == 0) throw std::invalid_argument("model: hidden_dim must be positive");
  if (c.num_classes < 2) throw std::invalid_argument("model: need at least two classes");
  if (c.rank == 0) throw std::invalid_argument("model: rank must be positive");
  if (c.task == TaskKind::binary_classification) {
    if (c.input_dim == 0) throw std::invalid_argument("model: input_dim must be positive");
  } else {
    if (c.vocab_size < 2) throw std::invalid_argument("model: vocabulary too small");
    if (c.embed_dim == 0) throw std::invalid_argument("model: embed_dim must be positive");
  }
  if (c.confidence == ConfidenceKind::mcd && c.num_classes != 2)
    throw std::invalid_argument("model: class-distance confidence requires two classes");
}

}  // namespace

const char* confidence_name(ConfidenceKind kind) {
  return kind == ConfidenceKind::mcd ? "mcd" : "negative_distance";
}

ConfidenceKind confidence_from_name(const std::string& name) {
  if (name == "mcd") return ConfidenceKind::mcd;
  if (name == "negative_distance") return ConfidenceKind::negative_distance;
  throw ParseError("unknown confidence kind: " + name);
}

ModelParams ModelParams::init(const ModelConfig& config, std::vector<std::string> source_names,
                              std::uint64_t seed) {
  validate(config);
  if (source_names.empty()) throw std::invalid_argument("model: need at least one source");

  ModelParams p;
  p.config = config;
  p.source_names = std::move(source_names);
  Rng root(seed);

  const std::size_t h = config.hidden_dim;
  const std::size_t enc_in = config.encoder_input_dim();
  const double enc_std = 1.0 / std::sqrt(static_cast<double>(enc_in));

  if (config.task == TaskKind::binary_classification) {
    MlpEncoderParams enc;
    enc.w1 = DenseMatrix(h, enc_in);
    enc.b1 = DenseMatrix(1, h);
    fill_gaussian(enc.w1, enc_std, root.fork("encoder.w1"));
    p.encoder = std::move(enc);
  } else {
    TokenEncoderParams enc;
    enc.embedding = DenseMatrix(config.vocab_size, config.embed_dim);
    enc.w1 = DenseMatrix(h, enc_in);
    enc.b1 = DenseMatrix(1, h);
    fill_gaussian(enc.embedding, 1.0 / std::sqrt(static_cast<double>(config.embed_dim)),
                  root.fork("encoder.embedding"));
    for (auto& x : enc.embedding.row(Vocabulary::kPad)) x = 0.0;
    fill_gaussian(enc.w1, enc_std, root.fork("encoder.w1"));
    p.encoder = std::move(enc);
  }

  for (const auto& name : p.source_names) {
    ClassifierParams cls;
    cls.w = DenseMatrix(config.num_classes, h);
    fill_gaussian(cls.w, 1.0 / std::sqrt(static_cast<double>(h)), root.fork("classifier." + name));
    if (config.classifier_bias) cls.b = DenseMatrix(1, config.num_classes);
    p.classifiers.push_back(std::move(cls));
  }

  // Small factors keep initial distances close together, so the mixture
  // starts near uniform instead of committing to one source.
  const double metric_std = 0.1 / std::sqrt(static_cast<double>(h));
  std::size_t metric_count =
      config.has_metrics ? (config.shared_metric ? 1 : p.source_names.size()) : 0;
  for (std::size_t i = 0; i < metric_count; ++i) {
    MetricParams m;
    m.u = DenseMatrix(h, config.rank);
    std::string tag = config.shared_metric ? "shared" : p.source_names[i];
    fill_gaussian(m.u, metric_std, root.fork("metric." + tag));
    p.metrics.push_back(std::move(m));
  }
  return p;
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z = *this;
  for (auto& ref : z.param_refs()) ref.tensor->set_zero();
  return z;
}

std::vector<ParamRef> ModelParams::param_refs() {
  std::vector<ParamRef> refs;
  if (auto* mlp = std::get_if<MlpEncoderParams>(&encoder)) {
    refs.push_back({"encoder.w1", &mlp->w1});
    refs.push_back({"encoder.b1", &mlp->b1});
  } else {
    auto& tok = std::get<TokenEncoderParams>(encoder);
    refs.push_back({"encoder.embedding", &tok.embedding});
    refs.push_back({"encoder.w1", &tok.w1});
    refs.push_back({"encoder.b1", &tok.b1});
  }
  for (std::size_t i = 0; i < classifiers.size(); ++i) {
    refs.push_back({"classifier." + source_names[i] + ".w", &classifiers[i].w});
    if (classifiers[i].b.size() > 0)
      refs.push_back({"classifier." + source_names[i] + ".b", &classifiers[i].b});
  }
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    std::string tag = config.shared_metric ? "shared" : source_names[i];
    refs.push_back({"metric." + tag + ".u", &metrics[i].u});
  }
  return refs;
}

std::vector<double> ModelParams::flatten() const {
  auto refs = const_cast<ModelParams*>(this)->param_refs();
  std::vector<double> theta;
  theta.reserve(parameter_count());
  for (auto& ref : refs) theta.insert(theta.end(), ref.tensor->data.begin(), ref.tensor->data.end());
  return theta;
}

void ModelParams::unflatten(const std::vector<double>& theta) {
  std::size_t offset = 0;
  for (auto& ref : param_refs()) {
    if (offset + ref.tensor->size() > theta.size())
      throw std::invalid_argument("unflatten: parameter vector too short");
    std::copy(theta.begin() + static_cast<std::ptrdiff_t>(offset),
              theta.begin() + static_cast<std::ptrdiff_t>(offset + ref.tensor->size()),
              ref.tensor->data.begin());
    offset += ref.tensor->size();
  }
  if (offset != theta.size())
    throw std::invalid_argument("unflatten: parameter vector too long");
}

std::size_t ModelParams::parameter_count() const {
  auto refs = const_cast<ModelParams*>(this)->param_refs();
  std::size_t n = 0;
  for (auto& ref : refs) n += ref.tensor->size();
  return n;
}

bool DomainStats::covers_all_classes() const {
  if (class_counts.empty()) return false;
  for (std::size_t c : class_counts)
    if (c == 0) return false;
  return true;
}

void save_checkpoint(const std::string& path, const ModelBundle& bundle) {
  const ModelConfig& c = bundle.params.config;
  json j;
  j["format"] = "msmoe-checkpoint";
  j["version"] = 1;
  j["config"] = {
      {"task", task_name(c.task)},
      {"confidence", confidence_name(c.confidence)},
      {"input_dim", c.input_dim},
      {"vocab_size", c.vocab_size},
      {"embed_dim", c.embed_dim},
      {"window_radius", c.window_radius},
      {"hidden_dim", c.hidden_dim},
      {"num_classes", c.num_classes},
      {"rank", c.rank},
      {"classifier_bias", c.classifier_bias},
      {"shared_metric", c.shared_metric},
      {"has_metrics", c.has_metrics},
  };
  j["sources"] = bundle.params.source_names;
  j["label_names"] = bundle.label_names;
  if (c.task == TaskKind::sequence_tagging) j["vocab"] = bundle.vocab.tokens;

  json tensors = json::object();
  for (auto& ref : const_cast<ModelParams&>(bundle.params).param_refs())
    tensors[ref.name] = tensor_to_json(*ref.tensor);
  j["tensors"] = std::move(tensors);

  json stats = json::array();
  for (std::size_t i = 0; i < bundle.stats.size(); ++i) {
    const DomainStats& s = bundle.stats[i];
    json js{{"name", bundle.params.source_names.at(i)},
            {"count", s.count},
            {"mean", s.mean}};
    if (s.has_class_means()) {
      js["class_means"] = tensor_to_json(s.class_means);
      js["class_counts"] = s.class_counts;
    }
    stats.push_back(std::move(js));
  }
  j["stats"] = std::move(stats);

  json meta = json::array();
  for (const auto& [k, v] : bundle.metadata) meta.push_back(json::array({k, v}));
  j["metadata"] = std::move(meta);

  std::ofstream out(path);
  if (!out) throw ParseError(path + ": cannot open for writing");
  out << j.dump(1) << '\n';
  if (!out) throw ParseError(path + ": write failed");
}

ModelBundle load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "msmoe-checkpoint")
      throw ParseError(path + ": not a checkpoint file");
    if (j.at("version").get<int>() != 1)
      throw ParseError(path + ": unsupported checkpoint version");

    const json& jc = j.at("config");
    ModelConfig c;
    c.task = task_from_name(jc.at("task").get<std::string>());
    c.confidence = confidence_from_name(jc.at("confidence").get<std::string>());
    c.input_dim = jc.at("input_dim").get<std::size_t>();
    c.vocab_size = jc.at("vocab_size").get<std::size_t>();
    c.embed_dim = jc.at("embed_dim").get<std::size_t>();
    c.window_radius = jc.at("window_radius").get<std::size_t>();
    c.hidden_dim = jc.at("hidden_dim").get<std::size_t>();
    c.num_classes = jc.at("num_classes").get<std::size_t>();
    c.rank = jc.at("rank").get<std::size_t>();
    c.classifier_bias = jc.at("classifier_bias").get<bool>();
    c.shared_metric = jc.at("shared_metric").get<bool>();
    c.has_metrics = jc.at("has_metrics").get<bool>();

    ModelBundle bundle;
    bundle.params = ModelParams::init(c, j.at("sources").get<std::vector<std::string>>(), 0);
    const json& tensors = j.at("tensors");
    for (auto& ref : bundle.params.param_refs()) {
      if (!tensors.contains(ref.name)) throw ParseError(path + ": missing tensor " + ref.name);
      DenseMatrix loaded = tensor_from_json(tensors.at(ref.name));
      if (!loaded.same_shape(*ref.tensor))
        throw ParseError(path + ": tensor " + ref.name + " has unexpected shape");
      *ref.tensor = std::move(loaded);
    }

    bundle.label_names = j.at("label_names").get<std::vector<std::string>>();
    if (c.task == TaskKind::sequence_tagging) {
      bundle.vocab.tokens = j.at("vocab").get<std::vector<std::string>>();
      bundle.vocab.index.clear();
      for (std::size_t i = 0; i < bundle.vocab.tokens.size(); ++i)
        bundle.vocab.index.emplace(bundle.vocab.tokens[i], static_cast<int>(i));
    }

    for (const json& js : j.at("stats")) {
      DomainStats s;
      s.count = js.at("count").get<std::size_t>();
      s.mean = js.at("mean").get<std::vector<double>>();
      if (js.contains("class_means")) {
        s.class_means = tensor_from_json(js.at("class_means"));
        s.class_counts = js.at("class_counts").get<std::vector<std::size_t>>();
      }
      bundle.stats.push_back(std::move(s));
    }
    if (bundle.stats.size() != bundle.params.source_names.size())
      throw ParseError(path + ": statistics do not cover every source");

    for (const json& pair : j.at("metadata"))
      bundle.metadata.emplace_back(pair.at(0).get<std::string>(), pair.at(1).get<std::string>());
    return bundle;
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace msmoe
