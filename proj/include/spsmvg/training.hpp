#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "spsmvg/errors.hpp"
#include "spsmvg/model.hpp"
#include "spsmvg/rng.hpp"

namespace spsmvg {

struct TrainConfig {
  double lr0 = 5e-2;
  double weight_decay = 1e-5;
  double decay_factor = 0.5;
  std::size_t decay_every = 10;
  std::size_t epochs = 60;
  std::size_t batch_size = 8;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(lr0 > 0.0))
      throw ConfigError("lr0 must be positive");
    if (!(decay_factor > 0.0 && decay_factor <= 1.0))
      throw ConfigError("decay_factor must lie in (0, 1]");
    if (decay_every == 0)
      throw ConfigError("decay_every must be at least 1");
    if (batch_size == 0)
      throw ConfigError("batch_size must be at least 1");
    if (weight_decay < 0.0)
      throw ConfigError("weight_decay must be non-negative");
  }

  friend bool operator==(const TrainConfig &, const TrainConfig &) = default;
};

/// One labelled comparison with images referenced by index into Dataset::images.
struct IndexedPair {
  std::size_t series = 0;
  std::size_t first = 0;
  std::size_t second = 0;
  int y = 0; // 1: first preferred
};

/// Pairs plus the raw views of every referenced image, ready for the model.
struct Dataset {
  std::vector<std::string> series_ids;
  std::vector<std::string> image_ids;
  std::vector<std::vector<RawView>> images;
  std::vector<IndexedPair> pairs;

  bool empty() const { return pairs.empty(); }
};

struct Metrics {
  double loss = 0.0;
  double accuracy = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::size_t count() const { return tp + fp + tn + fn; }
};

/// Predicted label: 1 iff f > 0.5 (a tie predicts 0).
inline int predicted_label(double f) { return f > 0.5 ? 1 : 0; }

inline Metrics compute_metrics(std::span<const double> probs, std::span<const int> labels) {
  if (probs.size() != labels.size() || probs.empty())
    throw EvaluationError("metrics need equal, non-empty prediction and label lists");
  Metrics m;
  double loss = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const int yhat = predicted_label(probs[i]);
    const int y = labels[i];
    if (yhat == 1 && y == 1) ++m.tp;
    else if (yhat == 1 && y == 0) ++m.fp;
    else if (yhat == 0 && y == 0) ++m.tn;
    else ++m.fn;
    loss += pairwise_loss({probs[i]}, y);
  }
  m.loss = loss / static_cast<double>(probs.size());
  m.accuracy = static_cast<double>(m.tp + m.tn) / static_cast<double>(m.count());
  const double precision = (m.tp + m.fp) ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp) : 0.0;
  const double recall = (m.tp + m.fn) ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn) : 0.0;
  m.f1 = (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  return m;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Seed of the pair shuffle for a given epoch; checkpoints record it as the RNG state.
inline std::uint64_t shuffle_seed(std::uint64_t seed, std::size_t epoch) { return mix_seed(seed, epoch + 1); }

/// Rounds every parameter to single precision, the precision checkpoints store.
inline void snap_to_storage_precision(ModelParams &params) {
  for (auto *t : params.tensors())
    for (auto &v : t->value.data())
      v = static_cast<double>(static_cast<float>(v));
}

/// Glorot-uniform weights, zero biases, and an all-zero output layer so the
/// untrained model predicts exactly 0.5.
inline ModelParams init_params(const ModelConfig &cfg, std::uint64_t seed) {
  ModelParams params(cfg);
  Rng rng(mix_seed(seed, 0x1417));
  for (auto &nt : params.named_tensors()) {
    if (!nt.decays || nt.tensor == &params.fc3_w)
      continue;
    Matrix &w = nt.tensor->value;
    const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    for (auto &v : w.data())
      v = rng.uniform(-limit, limit);
  }
  snap_to_storage_precision(params);
  return params;
}

/// Step-decayed learning rate: lr0 * decay_factor^floor(epoch / decay_every).
inline double lr_schedule(std::size_t epoch, const TrainConfig &cfg) {
  return cfg.lr0 * std::pow(cfg.decay_factor, static_cast<double>(epoch / cfg.decay_every));
}

/// w <- w - lr (grad + weight_decay w); biases skip the decay term. Gradients are zeroed afterwards.
/// Nothing is modified if any gradient is non-finite.
inline void sgd_step(ModelParams &params, double lr, double weight_decay) {
  auto tensors = params.named_tensors();
  for (const auto &nt : tensors)
    if (!nt.tensor->grad.all_finite())
      throw DivergenceError("non-finite gradient in parameter '" + nt.name + "'");
  for (auto &nt : tensors) {
    auto &w = nt.tensor->value;
    const auto &g = nt.tensor->grad;
    const double wd = nt.decays ? weight_decay : 0.0;
    for (std::size_t i = 0; i < w.size(); ++i)
      w[i] -= lr * (g[i] + wd * w[i]);
    nt.tensor->zero_grad();
  }
}

/// Mean batch loss and its gradient (accumulated into params) for a set of pairs.
inline double accumulate_batch(const Dataset &data, std::span<const std::size_t> pair_indices, ModelParams &params,
                               const ModelConfig &cfg, std::vector<double> *probs = nullptr) {
  const double weight = 1.0 / static_cast<double>(pair_indices.size());
  double loss = 0.0;
  for (auto idx : pair_indices) {
    const auto &p = data.pairs[idx];
    const auto step = pair_forward_backward(data.images[p.first], data.images[p.second], p.y, params, cfg, weight);
    loss += step.loss;
    if (probs)
      probs->push_back(step.prediction.f);
  }
  return loss * weight;
}

/// One pass over the shuffled training pairs in mini-batches of mean-loss SGD.
/// Metrics are those of the pre-update predictions seen during the pass.
inline Metrics train_epoch(const Dataset &data, ModelParams &params, const ModelConfig &model_cfg,
                           const TrainConfig &cfg, std::size_t epoch) {
  if (data.empty())
    throw ConfigError("training set is empty");
  std::vector<std::size_t> order(data.pairs.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(shuffle_seed(cfg.seed, epoch));
  rng.shuffle(order);

  const double lr = lr_schedule(epoch, cfg);
  std::vector<double> probs;
  std::vector<int> labels;
  probs.reserve(order.size());
  params.zero_grad();
  for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
    const std::size_t end = std::min(order.size(), start + cfg.batch_size);
    std::span<const std::size_t> batch(order.data() + start, end - start);
    accumulate_batch(data, batch, params, model_cfg, &probs);
    for (auto idx : batch)
      labels.push_back(data.pairs[idx].y);
    sgd_step(params, lr, cfg.weight_decay);
  }
  snap_to_storage_precision(params);
  return compute_metrics(probs, labels);
}

inline std::vector<double> predict_all(const Dataset &data, const ModelParams &params, const ModelConfig &cfg) {
  std::vector<double> probs;
  probs.reserve(data.pairs.size());
  for (const auto &p : data.pairs)
    probs.push_back(predict_pair(data.images[p.first], data.images[p.second], params, cfg).f);
  return probs;
}

inline Metrics evaluate(const Dataset &data, const ModelParams &params, const ModelConfig &cfg) {
  if (data.empty())
    throw EvaluationError("evaluation set is empty");
  std::vector<int> labels;
  for (const auto &p : data.pairs)
    labels.push_back(p.y);
  return compute_metrics(predict_all(data, params, cfg), labels);
}

} // namespace spsmvg
