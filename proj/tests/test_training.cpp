#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "oracles.hpp"
#include "spsmvg/dataset.hpp"
#include "spsmvg/synth.hpp"
#include "spsmvg/training.hpp"

using namespace spsmvg;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

struct SanitySet {
  ModelConfig model;
  Dataset data;
};

// Four series of three photos: twelve labelled pairs. The first eight form the sanity batch.
const SanitySet &sanity_set() {
  static const SanitySet set = [] {
    const auto dir = fs::temp_directory_path() / "spsmvg_test_training_corpus";
    fs::remove_all(dir);
    SynthSpec spec;
    spec.series = 4;
    spec.photos = 3;
    spec.width = spec.height = 16;
    gen_synthetic(spec, dir);
    ViewConfig vc;
    vc.deep_dim = spec.deep_dim;
    vc.common_dim = 8;
    SanitySet s{ModelConfig::defaults(vc), build_dataset(load_manifest(dir / "manifest.tsv"), vc)};
    s.data.pairs.resize(8);
    return s;
  }();
  return set;
}

} // namespace

TEST_CASE("parameter initialization") {
  const auto &s = sanity_set();
  auto a = init_params(s.model, 3);
  auto b = init_params(s.model, 3);
  auto c = init_params(s.model, 4);
  CHECK(a.values_equal(b));
  CHECK_FALSE(a.gcn1.value == c.gcn1.value);
  for (auto &nt : a.named_tensors()) {
    const Matrix &w = nt.tensor->value;
    if (!nt.decays || nt.tensor == &a.fc3_w) {
      CHECK(w == Matrix(w.rows(), w.cols()));
      continue;
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    for (double v : w.data())
      CHECK(std::abs(v) <= limit);
    CHECK_FALSE(w == Matrix(w.rows(), w.cols()));
  }
}

TEST_CASE("an untrained model predicts one half and loses ln 2") {
  const auto &s = sanity_set();
  auto params = init_params(s.model, 9);
  for (double f : predict_all(s.data, params, s.model))
    CHECK(f == 0.5);
  const Metrics m = evaluate(s.data, params, s.model);
  CHECK(std::abs(m.loss - std::numbers::ln2) <= 1e-12);
  CHECK(m.tp + m.fp == 0); // ties predict class 0
}

TEST_CASE("SGD step") {
  ModelParams p;
  p.gcn1 = ParamTensor(Matrix{{1.0}});
  p.fc1_b = ParamTensor(Matrix{{1.0}});

  SECTION("weight decay shrinks weights but not biases") {
    sgd_step(p, 0.1, 0.1);
    CHECK(p.gcn1.value[0] == Approx(0.99).margin(1e-15));
    CHECK(p.fc1_b.value[0] == 1.0);
  }
  SECTION("plain gradient step and gradient reset") {
    p.gcn1.grad[0] = 2.0;
    sgd_step(p, 0.25, 0.0);
    CHECK(p.gcn1.value[0] == 0.5);
    CHECK(p.gcn1.grad[0] == 0.0);
  }
  SECTION("zero learning rate is a no-op") {
    p.gcn1.grad[0] = 3.0;
    sgd_step(p, 0.0, 0.5);
    CHECK(p.gcn1.value[0] == 1.0);
  }
  SECTION("non-finite gradients abort before any update") {
    p.gcn1.grad[0] = 1.0;
    p.fc1_b.grad[0] = std::nan("");
    CHECK_THROWS_WITH(sgd_step(p, 0.1, 0.0), Catch::Matchers::ContainsSubstring("fc1.bias"));
    CHECK(p.gcn1.value[0] == 1.0);
  }
}

TEST_CASE("learning-rate schedule") {
  TrainConfig cfg;
  CHECK(lr_schedule(0, cfg) == 5e-2);
  CHECK(lr_schedule(9, cfg) == 5e-2);
  CHECK(lr_schedule(10, cfg) == 2.5e-2);
  CHECK(lr_schedule(25, cfg) == 1.25e-2);
  cfg.decay_factor = 1.0;
  CHECK(lr_schedule(1000, cfg) == 5e-2);
  cfg.decay_factor = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("classification metrics") {
  SECTION("perfect predictions") {
    const std::vector<double> f{0.9, 0.1, 0.8};
    const std::vector<int> y{1, 0, 1};
    const Metrics m = compute_metrics(f, y);
    CHECK(m.accuracy == 1.0);
    CHECK(m.f1 == 1.0);
  }
  SECTION("one true positive and one false positive") {
    const std::vector<double> f{0.7, 0.6, 0.4};
    const std::vector<int> y{1, 0, 0};
    const Metrics m = compute_metrics(f, y);
    CHECK(m.tp == 1);
    CHECK(m.fp == 1);
    CHECK(m.fn == 0);
    CHECK(m.f1 == Approx(2.0 / 3.0).margin(1e-15));
  }
  SECTION("uninformative predictions on a balanced set") {
    const std::vector<double> f(4, 0.5);
    const std::vector<int> y{1, 0, 1, 0};
    const Metrics m = compute_metrics(f, y);
    CHECK(m.accuracy == 0.5);
    CHECK(m.f1 == 0.0);
    CHECK(m.tn == 2);
  }
  SECTION("no positives at all gives F1 0") {
    const std::vector<double> f{0.2, 0.3};
    const std::vector<int> y{0, 0};
    CHECK(compute_metrics(f, y).f1 == 0.0);
  }
  CHECK_THROWS_AS(compute_metrics(std::vector<double>{}, std::vector<int>{}), EvaluationError);
}

TEST_CASE("training loop") {
  const auto &s = sanity_set();
  TrainConfig cfg;
  cfg.batch_size = 4;

  SECTION("zero learning rate leaves a one-pair model unchanged") {
    Dataset one = s.data;
    one.pairs.resize(1);
    auto params = init_params(s.model, 2);
    const auto before = params;
    TrainConfig still = cfg;
    still.lr0 = 1e-300; // lr0 must be positive; steps this small round away entirely
    still.weight_decay = 0.0;
    const Metrics m = train_epoch(one, params, s.model, still, 0);
    CHECK(m.count() == 1);
    CHECK(params.values_equal(before));
  }
  SECTION("identical seeds give bit-identical parameters and metrics") {
    auto a = init_params(s.model, 5);
    auto b = init_params(s.model, 5);
    for (std::size_t e = 0; e < 5; ++e) {
      const Metrics ma = train_epoch(s.data, a, s.model, cfg, e);
      const Metrics mb = train_epoch(s.data, b, s.model, cfg, e);
      CHECK(ma.loss == mb.loss);
    }
    CHECK(a.values_equal(b));
  }
  SECTION("fifty epochs reduce the loss below ln 2") {
    auto params = init_params(s.model, 1);
    for (std::size_t e = 0; e < 50; ++e)
      train_epoch(s.data, params, s.model, cfg, e);
    CHECK(evaluate(s.data, params, s.model).loss < std::numbers::ln2);
  }
  SECTION("small full-batch steps never increase the loss") {
    auto params = init_params(s.model, 1);
    // Move away from the symmetric start so the gradient reaches every layer.
    for (std::size_t e = 0; e < 5; ++e)
      train_epoch(s.data, params, s.model, cfg, e);
    std::vector<std::size_t> all(s.data.pairs.size());
    std::iota(all.begin(), all.end(), 0);
    double previous = evaluate(s.data, params, s.model).loss;
    for (int step = 0; step < 10; ++step) {
      params.zero_grad();
      accumulate_batch(s.data, all, params, s.model);
      sgd_step(params, 1e-3, 0.0);
      const double loss = evaluate(s.data, params, s.model).loss;
      CHECK(loss <= previous);
      previous = loss;
    }
  }
  SECTION("evaluation is pure") {
    auto params = init_params(s.model, 3);
    train_epoch(s.data, params, s.model, cfg, 0);
    const Metrics a = evaluate(s.data, params, s.model);
    const Metrics b = evaluate(s.data, params, s.model);
    CHECK(a.loss == b.loss);
    CHECK(a.accuracy == b.accuracy);
  }
  SECTION("empty data is rejected") {
    auto params = init_params(s.model, 3);
    CHECK_THROWS_AS(train_epoch(Dataset{}, params, s.model, cfg, 0), ConfigError);
    CHECK_THROWS_AS(evaluate(Dataset{}, params, s.model), EvaluationError);
  }
}

TEST_CASE("evaluate on a model with known predictions") {
  const std::vector<double> probs{0.8, 0.6, 0.3, 0.55, 0.45, 0.5};
  const std::vector<int> labels{1, 1, 1, 0, 0, 1};
  auto fx = testing::controlled_fixture(probs, labels);
  const auto f = predict_all(fx.data, fx.params, fx.model);
  for (std::size_t k = 0; k < probs.size(); ++k)
    CHECK(f[k] == Approx(probs[k]).margin(1e-12));
  // Predicted 1,1,0,1,0,0 (0.5 is a tie): TP 2, FP 1, TN 1, FN 2.
  const Metrics m = evaluate(fx.data, fx.params, fx.model);
  CHECK(m.tp == 2);
  CHECK(m.fp == 1);
  CHECK(m.tn == 1);
  CHECK(m.fn == 2);
  CHECK(m.accuracy == Approx(0.5).margin(1e-15));
  CHECK(m.f1 == Approx(4.0 / 7.0).margin(1e-15)); // P = 2/3, R = 1/2
}
