// Command-line driver: synthesize domains, train the mixture or a
// baseline, evaluate checkpoints, and sweep hyper-parameters.
//
// Exit codes: 0 success, 1 usage error, 2 data/parse error, 3 numeric
// failure during training.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "msmoe/dataset.hpp"
#include "msmoe/metric.hpp"
#include "msmoe/model.hpp"
#include "msmoe/numerics.hpp"
#include "msmoe/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace msmoe;

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fingerprint_hex(const std::string& path) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(file_fingerprint(path)));
  return buf;
}

std::string stem_of(const std::string& path) {
  std::string stem = fs::path(path).stem().string();
  return stem.empty() ? path : stem;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw ParseError(path.string() + ": cannot open for writing");
  return out;
}

void write_manifest(const fs::path& out_dir, const json& manifest) {
  auto f = open_out(out_dir / "manifest.json");
  f << manifest.dump(2) << '\n';
  if (!f) throw ParseError((out_dir / "manifest.json").string() + ": write failed");
}

// Crude format sniff used only to tell a wrong-task file (usage error)
// from a malformed one (parse error).
TaskKind sniff_task(const std::string& path) {
  std::ifstream f(path);
  std::string line;
  while (std::getline(f, line)) {
    std::istringstream iss(line);
    std::vector<std::string> fields;
    std::string field;
    while (iss >> field) fields.push_back(field);
    if (fields.empty()) continue;
    for (std::size_t i = 1; i < fields.size(); ++i)
      if (fields[i].find(':') != std::string::npos) return TaskKind::binary_classification;
    if (fields.size() <= 2) return TaskKind::sequence_tagging;
    return TaskKind::binary_classification;
  }
  return TaskKind::binary_classification;
}

struct LoadedData {
  std::vector<DomainDataset> sources;
  std::optional<DomainDataset> target;
  Vocabulary vocab;
  std::vector<std::string> tagset;
  bool tokens = false;
};

LoadedData load_inputs(const std::vector<std::string>& source_paths, const std::string& target_path,
                       const std::string& format, std::size_t declared_dim) {
  if (format != "sparse" && format != "tokens")
    throw std::invalid_argument("--format must be sparse or tokens");
  LoadedData data;
  data.tokens = format == "tokens";
  for (const auto& p : source_paths) {
    if (data.tokens)
      data.sources.push_back(
          load_token_tagged(p, stem_of(p), data.vocab, true, data.tagset, true));
    else
      data.sources.push_back(load_sparse(p, stem_of(p), declared_dim));
  }
  if (!target_path.empty()) {
    if (data.tokens)
      data.target =
          load_token_tagged(target_path, "target", data.vocab, true, data.tagset, false);
    else
      data.target = load_sparse(target_path, "target", declared_dim);
  }
  if (!data.tokens && declared_dim == 0) {
    // Inferred dimensions can differ per file; pad everything to the widest.
    std::size_t dim = 0;
    for (const auto& s : data.sources) dim = std::max(dim, s.feature_dim);
    if (data.target) dim = std::max(dim, data.target->feature_dim);
    auto widen = [dim](DomainDataset& ds) {
      if (ds.feature_dim == dim) return;
      ds.feature_dim = dim;
      for (auto& ex : ds.examples) ex.features.resize(dim, 0.0);
    };
    for (auto& s : data.sources) widen(s);
    if (data.target) widen(*data.target);
  }
  return data;
}

struct SynthCli {
  SynthSpec spec;
  std::string out;
};

int run_synth(const SynthCli& o) {
  fs::create_directories(o.out);
  SynthResult res = synthesize(o.spec);

  json manifest;
  manifest["command"] = "synth";
  manifest["seed"] = o.spec.seed;
  manifest["config"] = {
      {"k", o.spec.num_sources},
      {"classes", o.spec.num_classes},
      {"dim", o.spec.dim},
      {"n", o.spec.per_domain_n},
      {"shift", o.spec.domain_shift},
      {"class_sep", o.spec.class_sep},
      {"noise_std", o.spec.noise_std},
      {"outliers", o.spec.outlier_domains},
      {"outlier_n", o.spec.outlier_n != 0 ? o.spec.outlier_n : o.spec.per_domain_n},
      {"outlier_noise", o.spec.outlier_noise},
      {"target_skew", o.spec.target_skew},
  };

  json files = json::array();
  json data = json::object();
  for (std::size_t i = 0; i < res.sources.size(); ++i) {
    const std::string name = res.sources[i].name + ".txt";
    const fs::path path = fs::path(o.out) / name;
    write_sparse(path.string(), res.sources[i]);
    files.push_back({{"path", name},
                     {"role", res.is_outlier[i] ? "outlier" : "source"},
                     {"examples", res.sources[i].examples.size()}});
    data[name] = fingerprint_hex(path.string());
  }
  const fs::path target_path = fs::path(o.out) / "target.txt";
  write_sparse(target_path.string(), res.target);
  files.push_back(
      {{"path", "target.txt"}, {"role", "target"}, {"examples", res.target.examples.size()}});
  data["target.txt"] = fingerprint_hex(target_path.string());

  manifest["artifacts"] = files;
  manifest["data"] = data;
  write_manifest(o.out, manifest);

  std::cout << "wrote " << res.sources.size() << " domain files and target.txt to " << o.out
            << "\n";
  return 0;
}

struct TrainCli {
  std::vector<std::string> sources;
  std::string target;
  std::string out;
  std::string mode = "moe";
  std::string format = "sparse";
  bool adversarial = false;
  bool gamma_given = false;
  std::size_t dim = 0;
  TrainConfig cfg;
};

json config_snapshot(const TrainConfig& cfg, TaskKind task, const std::string& mode,
                     const std::string& format) {
  return {
      {"mode", mode},
      {"format", format},
      {"task", task_name(task)},
      {"lambda", cfg.lambda},
      {"gamma", cfg.gamma},
      {"eta", cfg.eta},
      {"rank", cfg.resolved_rank()},
      {"learning_rate", cfg.resolved_lr(task)},
      {"hidden_dim", cfg.hidden_dim},
      {"embed_dim", cfg.embed_dim},
      {"window_radius", cfg.window_radius},
      {"batch_size", cfg.batch_size},
      {"weight_decay", cfg.weight_decay},
      {"max_epochs", cfg.max_epochs},
      {"patience", cfg.patience},
      {"val_fraction", cfg.val_fraction},
      {"confidence", cfg.mcd_confidence ? "mcd" : "negdist"},
      {"shared_metric", cfg.shared_metric},
      {"classifier_bias", cfg.classifier_bias},
      {"stop_gradient_on_means", cfg.stop_gradient_on_means},
  };
}

void write_epoch_log(const fs::path& path, const std::vector<EpochLog>& log) {
  auto f = open_out(path);
  f << "epoch,moe,mtl,adv,entropy,total,val_metric,learning_rate\n";
  for (const auto& e : log) {
    f << e.epoch << ',' << fmt_double(e.losses.moe) << ',' << fmt_double(e.losses.mtl) << ','
      << fmt_double(e.losses.adv) << ',' << fmt_double(e.losses.entropy) << ','
      << fmt_double(e.losses.total) << ',' << fmt_double(e.val_metric) << ','
      << fmt_double(e.learning_rate) << '\n';
  }
  if (!f) throw ParseError(path.string() + ": write failed");
}

int run_train(TrainCli& o) {
  if (o.adversarial && !o.gamma_given) o.cfg.gamma = 1.0;
  TrainMode mode = mode_from_name(o.mode);
  if (o.sources.empty()) throw std::invalid_argument("train: --sources is required");
  if (mode == TrainMode::moe && o.sources.size() < 2)
    throw std::invalid_argument("train: the moe mode needs at least two sources");
  if (o.cfg.gamma > 0.0 && o.target.empty())
    throw std::invalid_argument("train: adversarial training needs --target");

  LoadedData data = load_inputs(o.sources, o.target, o.format, o.dim);
  const TaskKind task = data.sources.at(0).task;
  if (data.tokens)
    for (auto& s : data.sources) s.label_names = data.tagset;

  fs::create_directories(o.out);
  json manifest;
  manifest["command"] = "train";
  manifest["seed"] = o.cfg.seed;
  manifest["config"] = config_snapshot(o.cfg, task, o.mode, o.format);
  json fps = json::object();
  for (const auto& p : o.sources) fps[p] = fingerprint_hex(p);
  if (!o.target.empty()) fps[o.target] = fingerprint_hex(o.target);
  manifest["data"] = fps;
  manifest["artifacts"] = {"checkpoint.json", "epochs.csv", "metrics.txt"};
  write_manifest(o.out, manifest);

  const Vocabulary* vocab = data.tokens ? &data.vocab : nullptr;
  const DomainDataset* target = data.target ? &*data.target : nullptr;

  TrainResult result;
  std::vector<std::pair<std::string, double>> candidate_acc;
  std::string selected;
  if (mode == TrainMode::moe) {
    result = train_moe(data.sources, target, o.cfg, vocab);
  } else if (mode == TrainMode::uni_ms) {
    DomainDataset pooled = pool_sources(data.sources);
    result = train_single(pooled, target, o.cfg, vocab, "uni-ms");
  } else {
    if (target == nullptr || !target->labeled())
      throw std::invalid_argument("train: best-ss selection needs a labeled --target");
    double best_acc = -1.0;
    for (const auto& s : data.sources) {
      TrainResult r = train_single(s, target, o.cfg, vocab, "best-ss");
      double acc = evaluate(r.bundle, *target).accuracy;
      candidate_acc.emplace_back(s.name, acc);
      if (acc > best_acc) {
        best_acc = acc;
        result = std::move(r);
        selected = s.name;
      }
    }
    result.bundle.metadata.emplace_back("selected_source", selected);
  }

  save_checkpoint((fs::path(o.out) / "checkpoint.json").string(), result.bundle);
  write_epoch_log(fs::path(o.out) / "epochs.csv", result.log);

  auto metrics = open_out(fs::path(o.out) / "metrics.txt");
  metrics << "mode=" << o.mode << '\n';
  metrics << "task=" << task_name(task) << '\n';
  metrics << "seed=" << o.cfg.seed << '\n';
  metrics << "sources=";
  for (std::size_t i = 0; i < data.sources.size(); ++i)
    metrics << (i ? "," : "") << data.sources[i].name;
  metrics << '\n';
  metrics << "epochs_run=" << result.epochs_run << '\n';
  metrics << "best_epoch=" << result.best_epoch << '\n';
  if (!std::isnan(result.best_val)) metrics << "best_val=" << fmt_double(result.best_val) << '\n';
  if (!std::isnan(result.initial_target_mmd))
    metrics << "initial_mmd=" << fmt_double(result.initial_target_mmd) << '\n';
  if (!std::isnan(result.final_target_mmd))
    metrics << "final_mmd=" << fmt_double(result.final_target_mmd) << '\n';
  for (const auto& [name, acc] : candidate_acc)
    metrics << "accuracy_" << name << '=' << fmt_double(acc) << '\n';
  if (!selected.empty()) metrics << "selected_source=" << selected << '\n';

  if (target != nullptr) {
    EvalResult eval = evaluate(result.bundle, *target);
    if (eval.total > 0) {
      metrics << "accuracy=" << fmt_double(eval.accuracy) << '\n';
      metrics << "correct=" << eval.correct << '\n';
      metrics << "total=" << eval.total << '\n';
      std::cout << "target accuracy " << fmt_double(eval.accuracy) << "\n";
    }
    for (std::size_t k = 0; k < eval.mean_alpha.size(); ++k)
      metrics << "alpha_" << result.bundle.params.source_names[k] << '='
              << fmt_double(eval.mean_alpha[k]) << '\n';
  }
  if (!metrics) throw ParseError("metrics.txt: write failed");
  std::cout << "trained " << o.mode << " for " << result.epochs_run << " epochs, artifacts in "
            << o.out << "\n";
  return 0;
}

struct EvalCli {
  std::string checkpoint;
  std::string data;
  std::string export_alpha;
};

int run_eval(const EvalCli& o) {
  ModelBundle bundle = load_checkpoint(o.checkpoint);
  const TaskKind task = bundle.params.config.task;

  DomainDataset data;
  try {
    if (task == TaskKind::sequence_tagging) {
      Vocabulary vocab = bundle.vocab;
      std::vector<std::string> tagset = bundle.label_names;
      data = load_token_tagged(o.data, stem_of(o.data), vocab, false, tagset, false);
    } else {
      data = load_sparse(o.data, stem_of(o.data), bundle.params.config.input_dim);
    }
  } catch (const ParseError&) {
    if (sniff_task(o.data) != task)
      throw std::invalid_argument("eval: " + o.data + " does not look like " +
                                  task_name(task) + " data");
    throw;
  }

  const std::string* alpha_path = o.export_alpha.empty() ? nullptr : &o.export_alpha;
  EvalResult result = evaluate(bundle, data, alpha_path);
  if (result.total > 0) {
    std::cout << "accuracy=" << fmt_double(result.accuracy) << "\n";
    std::cout << "correct=" << result.correct << "\n";
    std::cout << "total=" << result.total << "\n";
  } else {
    std::cout << "total=0\n";
  }
  for (std::size_t k = 0; k < result.mean_alpha.size(); ++k)
    std::cout << "alpha_" << bundle.params.source_names[k] << '='
              << fmt_double(result.mean_alpha[k]) << "\n";
  return 0;
}

struct SweepCli {
  std::vector<std::string> sources;
  std::string out;
  std::string format = "sparse";
  bool adversarial = false;
  bool gamma_given = false;
  std::size_t dim = 0;
  std::vector<double> lambdas;
  std::vector<double> etas;
  std::vector<std::size_t> ranks;
  std::vector<double> lrs;
  TrainConfig cfg;
};

int run_sweep(SweepCli& o) {
  if (o.adversarial && !o.gamma_given) o.cfg.gamma = 1.0;
  // A dimension without a grid stays at the base config, so --lambda,
  // --eta, --rank and --lr keep their meaning under sweep.
  if (o.lambdas.empty()) o.lambdas = {o.cfg.lambda};
  if (o.etas.empty()) o.etas = {o.cfg.eta};
  if (o.ranks.empty()) o.ranks = {o.cfg.rank};
  if (o.lrs.empty()) o.lrs = {o.cfg.learning_rate};
  if (o.sources.size() < 2)
    throw std::invalid_argument("sweep: need at least two sources");
  LoadedData data = load_inputs(o.sources, "", o.format, o.dim);
  if (data.tokens)
    for (auto& s : data.sources) s.label_names = data.tagset;
  const TaskKind task = data.sources.at(0).task;

  fs::create_directories(o.out);
  json manifest;
  manifest["command"] = "sweep";
  manifest["seed"] = o.cfg.seed;
  manifest["config"] = config_snapshot(o.cfg, task, "moe", o.format);
  manifest["grid"] = {
      {"lambdas", o.lambdas}, {"etas", o.etas}, {"ranks", o.ranks}, {"learning_rates", o.lrs}};
  json fps = json::object();
  for (const auto& p : o.sources) fps[p] = fingerprint_hex(p);
  manifest["data"] = fps;
  manifest["artifacts"] = {"sweep.csv", "best.txt"};
  write_manifest(o.out, manifest);

  const Vocabulary* vocab = data.tokens ? &data.vocab : nullptr;
  SweepResult result =
      cross_validate(data.sources, o.cfg, o.lambdas, o.etas, o.ranks, o.lrs, vocab);

  auto csv = open_out(fs::path(o.out) / "sweep.csv");
  csv << "lambda,eta,rank,learning_rate,metric\n";
  for (const auto& p : result.report)
    csv << fmt_double(p.lambda) << ',' << fmt_double(p.eta) << ',' << p.rank << ','
        << fmt_double(p.learning_rate) << ',' << fmt_double(p.metric) << '\n';
  if (!csv) throw ParseError("sweep.csv: write failed");

  const GridPoint& best = result.report.at(result.best_index);
  auto bestf = open_out(fs::path(o.out) / "best.txt");
  bestf << "index=" << result.best_index << '\n';
  bestf << "lambda=" << fmt_double(best.lambda) << '\n';
  bestf << "eta=" << fmt_double(best.eta) << '\n';
  bestf << "rank=" << best.rank << '\n';
  bestf << "learning_rate=" << fmt_double(best.learning_rate) << '\n';
  bestf << "metric=" << fmt_double(best.metric) << '\n';
  if (!bestf) throw ParseError("best.txt: write failed");

  std::cout << "swept " << result.report.size() << " grid points; best metric "
            << fmt_double(best.metric) << " at index " << result.best_index << "\n";
  return 0;
}

void add_train_flags(CLI::App* cmd, TrainConfig& cfg) {
  cmd->add_option("--lambda", cfg.lambda, "moe/mtl interpolation in [0,1]");
  cmd->add_option("--eta", cfg.eta, "weight sharpening strength");
  cmd->add_option("--rank", cfg.rank, "metric rank, 0 = min(hidden,64)");
  cmd->add_option("--hidden", cfg.hidden_dim, "encoder width");
  cmd->add_option("--embed", cfg.embed_dim, "token embedding size");
  cmd->add_option("--window", cfg.window_radius, "token context radius");
  cmd->add_option("--batch", cfg.batch_size, "per-source batch size");
  cmd->add_option("--lr", cfg.learning_rate, "learning rate, 0 = task default");
  cmd->add_option("--weight-decay", cfg.weight_decay, "decoupled weight decay");
  cmd->add_option("--epochs", cfg.max_epochs, "epoch cap");
  cmd->add_option("--patience", cfg.patience, "epochs without improvement before stopping");
  cmd->add_option("--val-fraction", cfg.val_fraction, "held-out fraction per source");
  cmd->add_option_function<std::string>(
         "--confidence",
         [&cfg](const std::string& v) { cfg.mcd_confidence = v == "mcd"; },
         "routing confidence: mcd (two-class margin) or negdist (domain proximity)")
      ->check(CLI::IsMember({"mcd", "negdist"}));
  cmd->add_flag("--shared-metric", cfg.shared_metric, "one metric factor for all sources");
  cmd->add_flag("--classifier-bias", cfg.classifier_bias, "bias terms on the experts");
  cmd->add_flag("--frozen-means", cfg.stop_gradient_on_means,
                "treat batch statistics as constants in the backward pass");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-source mixture-of-experts domain adaptation"};
  app.require_subcommand(1);

  SynthCli synth;
  auto* synth_cmd = app.add_subcommand("synth", "generate shifted synthetic domains");
  synth_cmd->set_config("--config");
  synth_cmd->add_option("--out", synth.out, "output directory")->required();
  synth_cmd->add_option("--seed", synth.spec.seed, "generator seed");
  synth_cmd->add_option("--k", synth.spec.num_sources, "number of regular domains");
  synth_cmd->add_option("--classes", synth.spec.num_classes, "number of classes");
  synth_cmd->add_option("--dim", synth.spec.dim, "feature dimension");
  synth_cmd->add_option("--n", synth.spec.per_domain_n, "examples per domain");
  synth_cmd->add_option("--shift", synth.spec.domain_shift, "domain separation strength");
  synth_cmd->add_option("--class-sep", synth.spec.class_sep, "class separation strength");
  synth_cmd->add_option("--noise", synth.spec.noise_std, "cluster noise level");
  synth_cmd->add_option("--outliers", synth.spec.outlier_domains, "number of outlier domains");
  synth_cmd->add_option("--outlier-n", synth.spec.outlier_n,
                        "examples per outlier domain, 0 = --n");
  synth_cmd->add_option("--outlier-noise", synth.spec.outlier_noise,
                        "fraction of outlier labels randomized");
  synth_cmd->add_option("--target-skew", synth.spec.target_skew,
                        "skew of the target's domain mixture, 0 = uniform");

  TrainCli train;
  auto* train_cmd = app.add_subcommand("train", "train the mixture or a baseline");
  train_cmd->set_config("--config");
  train_cmd->add_option("--sources", train.sources, "comma-separated source files")
      ->required()
      ->delimiter(',');
  train_cmd->add_option("--target", train.target, "target file (features used when adversarial)");
  train_cmd->add_option("--out", train.out, "output directory")->required();
  train_cmd->add_option("--mode", train.mode, "moe, uni-ms, or best-ss")
      ->check(CLI::IsMember({"moe", "uni-ms", "best-ss"}));
  train_cmd->add_option("--format", train.format, "sparse or tokens")
      ->check(CLI::IsMember({"sparse", "tokens"}));
  train_cmd->add_option("--dim", train.dim, "declared feature dimension, 0 = infer");
  train_cmd->add_option("--seed", train.cfg.seed, "training seed");
  train_cmd->add_flag("--adversarial", train.adversarial, "enable the discrepancy term (gamma 1)");
  auto* gamma_opt = train_cmd->add_option("--gamma", train.cfg.gamma, "discrepancy weight");
  add_train_flags(train_cmd, train.cfg);

  EvalCli eval;
  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on a dataset");
  eval_cmd->set_config("--config");
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--data", eval.data, "dataset file")->required();
  eval_cmd->add_option("--export-alpha", eval.export_alpha,
                       "write per-unit mixture weights to this CSV");

  SweepCli sweep;
  auto* sweep_cmd = app.add_subcommand("sweep", "grid search by source rotation");
  sweep_cmd->set_config("--config");
  sweep_cmd->add_option("--sources", sweep.sources, "comma-separated source files")
      ->required()
      ->delimiter(',');
  sweep_cmd->add_option("--out", sweep.out, "output directory")->required();
  sweep_cmd->add_option("--format", sweep.format, "sparse or tokens")
      ->check(CLI::IsMember({"sparse", "tokens"}));
  sweep_cmd->add_option("--dim", sweep.dim, "declared feature dimension, 0 = infer");
  sweep_cmd->add_option("--seed", sweep.cfg.seed, "base seed");
  sweep_cmd->add_flag("--adversarial", sweep.adversarial,
                      "score with the discrepancy term active (gamma 1)");
  auto* sweep_gamma = sweep_cmd->add_option("--gamma", sweep.cfg.gamma, "discrepancy weight");
  sweep_cmd->add_option("--lambdas", sweep.lambdas, "grid of lambda values")->delimiter(',');
  sweep_cmd->add_option("--etas", sweep.etas, "grid of eta values")->delimiter(',');
  sweep_cmd->add_option("--ranks", sweep.ranks, "grid of metric ranks")->delimiter(',');
  sweep_cmd->add_option("--lrs", sweep.lrs, "grid of learning rates")->delimiter(',');
  add_train_flags(sweep_cmd, sweep.cfg);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  train.gamma_given = gamma_opt->count() > 0;
  sweep.gamma_given = sweep_gamma->count() > 0;

  try {
    if (synth_cmd->parsed()) return run_synth(synth);
    if (train_cmd->parsed()) return run_train(train);
    if (eval_cmd->parsed()) return run_eval(eval);
    if (sweep_cmd->parsed()) return run_sweep(sweep);
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
