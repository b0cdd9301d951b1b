#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "msmoe/encoder.hpp"
#include "msmoe/model.hpp"
#include "msmoe/numerics.hpp"

using namespace msmoe;

namespace {

ModelConfig small_mlp_config() {
  ModelConfig c;
  c.task = TaskKind::binary_classification;
  c.input_dim = 3;
  c.hidden_dim = 4;
  c.num_classes = 2;
  c.rank = 2;
  return c;
}

ModelConfig small_token_config() {
  ModelConfig c;
  c.task = TaskKind::sequence_tagging;
  c.confidence = ConfidenceKind::negative_distance;
  c.vocab_size = 7;
  c.embed_dim = 3;
  c.window_radius = 1;
  c.hidden_dim = 4;
  c.num_classes = 3;
  c.rank = 2;
  return c;
}

}  // namespace

TEST_CASE("mlp encoder computes relu of the affine map") {
  ModelParams model = ModelParams::init(small_mlp_config(), {"a", "b"}, 1);
  auto& enc = std::get<MlpEncoderParams>(model.encoder);
  // Overwrite with a hand matrix so the output is checkable.
  enc.w1 = DenseMatrix(4, 3);
  for (std::size_t i = 0; i < enc.w1.size(); ++i)
    enc.w1.data[i] = 0.1 * static_cast<double>(i + 1);
  enc.b1 = DenseMatrix(1, 4);
  enc.b1.data = {0.5, -10.0, 0.0, 0.25};

  Example ex;
  ex.features = {1.0, -2.0, 0.5};
  EncodedBatch batch = encode_batch(model, {&ex});
  REQUIRE(batch.hidden.rows == 1);
  REQUIRE(batch.hidden.cols == 4);
  // Row 0 of w1 is (0.1 0.2 0.3): dot = 0.1 - 0.4 + 0.15 = -0.15, +0.5 = 0.35.
  CHECK(batch.hidden(0, 0) == doctest::Approx(0.35).epsilon(1e-12));
  // Row 1 pre-activation is well below zero thanks to b1 = -10.
  CHECK(batch.hidden(0, 1) == 0.0);
  CHECK(batch.labels[0] == -1);
}

TEST_CASE("mlp encoder rejects wrong input width") {
  ModelParams model = ModelParams::init(small_mlp_config(), {"a", "b"}, 1);
  Example ex;
  ex.features = {1.0, 2.0};
  CHECK_THROWS_AS((void)encode_batch(model, {&ex}), std::invalid_argument);
}

TEST_CASE("token encoder windows, pads and flags labels") {
  ModelParams model = ModelParams::init(small_token_config(), {"a", "b"}, 2);
  Example sent;
  sent.tokens = {2, 3, 4};
  sent.tags = {0, 2, -1};
  EncodedBatch batch = encode_batch(model, {&sent});
  REQUIRE(batch.hidden.rows == 3);
  CHECK(batch.labels == std::vector<int>{0, 2, -1});
  // First unit's window is (pad, 2, 3); last is (3, 4, pad).
  REQUIRE(batch.cache.window_tokens.size() == 3);
  CHECK(batch.cache.window_tokens[0] == std::vector<int>{Vocabulary::kPad, 2, 3});
  CHECK(batch.cache.window_tokens[2] == std::vector<int>{3, 4, Vocabulary::kPad});

  // Padding embeds to zeros: the pad slot contributes nothing to the input.
  const auto& enc = std::get<TokenEncoderParams>(model.encoder);
  for (std::size_t d = 0; d < enc.embedding.cols; ++d)
    CHECK(enc.embedding(Vocabulary::kPad, d) == 0.0);
  for (std::size_t d = 0; d < 3; ++d) CHECK(batch.cache.input(0, d) == 0.0);

  Example bad;
  bad.tokens = {99};
  CHECK_THROWS_AS((void)encode_batch(model, {&bad}), std::invalid_argument);
}

TEST_CASE("encoder backward matches finite differences for both encoders") {
  for (int variant = 0; variant < 2; ++variant) {
    ModelConfig cfg = variant == 0 ? small_mlp_config() : small_token_config();
    ModelParams model = ModelParams::init(cfg, {"a", "b"}, 3 + variant);

    std::vector<Example> owned;
    std::vector<const Example*> batch;
    Rng rng(17);
    if (variant == 0) {
      for (int i = 0; i < 3; ++i) {
        Example ex;
        for (std::size_t d = 0; d < cfg.input_dim; ++d) ex.features.push_back(rng.gaussian());
        owned.push_back(ex);
      }
    } else {
      for (int i = 0; i < 2; ++i) {
        Example ex;
        std::size_t len = 2 + i;
        for (std::size_t t = 0; t < len; ++t)
          ex.tokens.push_back(static_cast<int>(2 + rng.uniform_index(cfg.vocab_size - 2)));
        owned.push_back(ex);
      }
    }
    for (const auto& ex : owned) batch.push_back(&ex);

    // Scalar loss: weighted sum of hidden activations, fixed weights.
    EncodedBatch probe = encode_batch(model, batch);
    DenseMatrix weights(probe.hidden.rows, probe.hidden.cols);
    for (std::size_t i = 0; i < weights.size(); ++i)
      weights.data[i] = std::sin(static_cast<double>(i) + 0.5);

    auto loss_at = [&](const std::vector<double>& theta) {
      ModelParams m = model;
      m.unflatten(theta);
      EncodedBatch b = encode_batch(m, batch);
      double s = 0.0;
      for (std::size_t i = 0; i < b.hidden.size(); ++i) s += weights.data[i] * b.hidden.data[i];
      return s;
    };

    ModelParams grads = model.zeros_like();
    encoder_backward(model, probe, weights, grads);
    std::vector<double> analytic = grads.flatten();
    std::vector<double> numeric = finite_diff_grad(loss_at, model.flatten());

    REQUIRE(analytic.size() == numeric.size());
    // The padding embedding row is pinned to zero, not a free parameter,
    // so its finite differences are meaningless. It sits first in the
    // flattened order.
    const std::size_t skip = variant == 1 ? cfg.embed_dim : 0;
    double max_err = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      if (i < skip) {
        CHECK(analytic[i] == 0.0);
        continue;
      }
      max_err = std::max(max_err, std::abs(analytic[i] - numeric[i]));
    }
    CHECK(max_err < 1e-6);
    double norm = std::accumulate(analytic.begin(), analytic.end(), 0.0,
                                  [](double a, double b) { return a + std::abs(b); });
    CHECK(norm > 0.1);  // a trivial all-zero gradient would be a bug, not a pass
  }
}

TEST_CASE("expert posterior is a distribution and follows the head weights") {
  ModelParams model = ModelParams::init(small_mlp_config(), {"a", "b"}, 5);
  std::vector<double> h{0.5, 1.0, 0.0, 2.0};
  auto p = expert_posterior(model, 0, h);
  REQUIRE(p.size() == 2);
  CHECK(p[0] + p[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(p[0] > 0.0);
  CHECK(p[1] > 0.0);

  // Manual check: logits = W h, softmax by hand.
  const auto& w = model.classifiers[0].w;
  std::vector<double> logits(2, 0.0);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t j = 0; j < 4; ++j) logits[c] += w(c, j) * h[j];
  auto expect = softmax(logits);
  CHECK(p[0] == doctest::Approx(expect[0]).epsilon(1e-12));
}

TEST_CASE("model initialization validates and scales by fan-in") {
  ModelConfig cfg = small_mlp_config();
  ModelParams model = ModelParams::init(cfg, {"a", "b"}, 7);
  CHECK(model.classifiers.size() == 2);
  CHECK(model.metrics.size() == 2);
  CHECK(std::get<MlpEncoderParams>(model.encoder).w1.rows == 4);

  // Same seed, same parameters; different seed, different parameters.
  ModelParams again = ModelParams::init(cfg, {"a", "b"}, 7);
  CHECK(model.flatten() == again.flatten());
  ModelParams other = ModelParams::init(cfg, {"a", "b"}, 8);
  CHECK(model.flatten() != other.flatten());

  ModelConfig bad = cfg;
  bad.num_classes = 3;  // mcd requires exactly two classes
  CHECK_THROWS_AS((void)ModelParams::init(bad, {"a", "b"}, 1), std::invalid_argument);
  bad = cfg;
  bad.rank = 0;
  CHECK_THROWS_AS((void)ModelParams::init(bad, {"a", "b"}, 1), std::invalid_argument);
  bad = cfg;
  bad.input_dim = 0;
  CHECK_THROWS_AS((void)ModelParams::init(bad, {"a", "b"}, 1), std::invalid_argument);
}

TEST_CASE("shared metric and baseline configs shape the parameter list") {
  ModelConfig cfg = small_mlp_config();
  cfg.shared_metric = true;
  ModelParams shared = ModelParams::init(cfg, {"a", "b", "c"}, 1);
  cfg.confidence = ConfidenceKind::negative_distance;
  CHECK(shared.metrics.size() == 1);
  CHECK(&shared.metric_for(0) == &shared.metric_for(2));

  ModelConfig solo = small_mlp_config();
  solo.has_metrics = false;
  ModelParams baseline = ModelParams::init(solo, {"only"}, 1);
  CHECK(baseline.metrics.empty());
  for (const auto& ref : baseline.param_refs())
    CHECK(ref.name.find("metric") == std::string::npos);
}

TEST_CASE("flatten and unflatten are inverse") {
  ModelParams model = ModelParams::init(small_token_config(), {"a", "b"}, 9);
  auto theta = model.flatten();
  CHECK(theta.size() == model.parameter_count());
  ModelParams copy = ModelParams::init(small_token_config(), {"a", "b"}, 10);
  copy.unflatten(theta);
  CHECK(copy.flatten() == theta);
}

TEST_CASE("checkpoint round trip preserves everything") {
  ModelConfig cfg = small_token_config();
  ModelParams model = ModelParams::init(cfg, {"web", "news"}, 11);

  ModelBundle bundle;
  bundle.params = model;
  bundle.label_names = {"N", "V", "D"};
  bundle.vocab.add("alpha");
  bundle.vocab.add("beta");
  for (std::size_t s = 0; s < 2; ++s) {
    DomainStats st;
    st.mean.assign(cfg.hidden_dim, 0.25 * static_cast<double>(s + 1));
    st.count = 10 * (s + 1);
    bundle.stats.push_back(st);
  }
  bundle.metadata = {{"mode", "moe"}, {"note", "round trip"}};

  auto path = (std::filesystem::temp_directory_path() / "msmoe_ckpt_test.json").string();
  save_checkpoint(path, bundle);
  ModelBundle back = load_checkpoint(path);
  std::filesystem::remove(path);

  CHECK(back.params.flatten() == bundle.params.flatten());
  CHECK(back.params.source_names == bundle.params.source_names);
  CHECK(back.params.config.task == cfg.task);
  CHECK(back.params.config.rank == cfg.rank);
  CHECK(back.label_names == bundle.label_names);
  CHECK(back.vocab.tokens == bundle.vocab.tokens);
  CHECK(back.vocab.lookup("beta") == bundle.vocab.lookup("beta"));
  REQUIRE(back.stats.size() == 2);
  CHECK(back.stats[1].mean == bundle.stats[1].mean);
  CHECK(back.stats[1].count == 20);
  CHECK(back.metadata == bundle.metadata);

  // Classification bundles with class means survive too.
  ModelConfig ccfg = small_mlp_config();
  ModelBundle cb;
  cb.params = ModelParams::init(ccfg, {"a", "b"}, 3);
  cb.label_names = {"-1", "+1"};
  for (std::size_t s = 0; s < 2; ++s) {
    DomainStats st;
    st.mean.assign(ccfg.hidden_dim, 0.1);
    st.class_means = DenseMatrix(2, ccfg.hidden_dim, 0.5);
    st.class_counts = {4, 6};
    st.count = 10;
    cb.stats.push_back(st);
  }
  save_checkpoint(path, cb);
  ModelBundle cback = load_checkpoint(path);
  std::filesystem::remove(path);
  CHECK(cback.stats[0].class_means.data == cb.stats[0].class_means.data);
  CHECK(cback.stats[0].class_counts == cb.stats[0].class_counts);

  CHECK_THROWS_AS((void)load_checkpoint("/nonexistent/msmoe.json"), ParseError);
}
