#pragma once

// End-to-end gradient check: random raw views, random (fully non-zero)
// parameters, a batch of labelled pairs, and the mean pairwise loss. Every
// scalar parameter's analytic gradient is compared against a central
// difference of the full forward pass, graph construction included.

#include <chrono>
#include <string>
#include <vector>

#include "spsmvg/model.hpp"
#include "spsmvg/numerics.hpp"
#include "spsmvg/rng.hpp"
#include "spsmvg/training.hpp"

namespace spsmvg {

struct GradcheckSpec {
  std::size_t common_dim = 16;
  std::size_t gcn_hidden = 16;
  std::size_t reduction = 4;
  std::size_t fc1 = 32;
  std::size_t fc2 = 16;
  std::size_t batch = 8;
  double eps = 1e-5;
  std::uint64_t seed = 1;
};

struct GradcheckReport {
  PoolingMode pooling = PoolingMode::max_avg;
  std::size_t draws = 1; // test points drawn until no probe crossed a kink
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t parameters = 0;
  double seconds = 0.0;
};

/// Four views (deep, color, hsv, sift) with small raw dimensions.
inline ModelConfig gradcheck_model(const GradcheckSpec &spec, PoolingMode mode) {
  ModelConfig cfg;
  cfg.views.views = {ViewKind::deep, ViewKind::color, ViewKind::hsv, ViewKind::sift};
  cfg.views.deep_dim = 12;
  cfg.views.color_bins = 4;
  cfg.views.hue_bins = 8;
  cfg.views.orient_bins = 8;
  cfg.views.common_dim = spec.common_dim;
  cfg.hyper.views = 4;
  cfg.hyper.common_dim = spec.common_dim;
  cfg.hyper.gcn_hidden = spec.gcn_hidden;
  cfg.hyper.reduction = spec.reduction;
  cfg.hyper.fc1 = spec.fc1;
  cfg.hyper.fc2 = spec.fc2;
  cfg.hyper.pooling = mode;
  cfg.lambda = 0.25;
  return cfg;
}

namespace detail {

// Which piece of every piecewise-linear map is active: ReLU masks, max-pool
// winners and the graph threshold mask. Central differences are only valid
// when both probes see the same pattern as the base point.
inline void append_pattern(const BranchCache &b, std::vector<std::uint8_t> &out) {
  for (double v : b.graph.keep.data())
    out.push_back(v != 0.0);
  for (const Matrix *m : {&b.gcn.pre1, &b.gcn.pre2, &b.attention.pre1})
    for (double v : m->data())
      out.push_back(v > 0.0);
  for (auto i : b.attention.argmax)
    out.push_back(static_cast<std::uint8_t>(i));
}

inline void append_pattern(const HeadCache &h, std::vector<std::uint8_t> &out) {
  for (const Matrix *m : {&h.pre1, &h.pre2})
    for (double v : m->data())
      out.push_back(v > 0.0);
}

} // namespace detail

inline constexpr std::size_t gradcheck_max_draws = 16;

inline GradcheckReport run_gradcheck(const GradcheckSpec &spec, PoolingMode mode) {
  const auto start = std::chrono::steady_clock::now();
  const ModelConfig cfg = gradcheck_model(spec, mode);
  Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(mode) + 100));
  for (std::size_t draw = 1;; ++draw) {

  ModelParams params = init_params(cfg, spec.seed);
  for (auto &nt : params.named_tensors())
    if (!nt.decays || nt.tensor == &params.fc3_w)
      for (auto &v : nt.tensor->value.data())
        v = rng.uniform(-0.3, 0.3);

  auto random_views = [&] {
    std::vector<RawView> views;
    for (auto k : cfg.views.views) {
      RawView v{k, std::vector<double>(cfg.views.raw_dim(k))};
      for (auto &x : v.values)
        x = rng.uniform(0.0, 1.0);
      views.push_back(std::move(v));
    }
    return views;
  };
  std::vector<std::vector<RawView>> firsts, seconds;
  std::vector<int> labels;
  for (std::size_t i = 0; i < spec.batch; ++i) {
    firsts.push_back(random_views());
    seconds.push_back(random_views());
    labels.push_back(rng.unit() < 0.5 ? 1 : 0);
  }

  std::vector<std::uint8_t> pattern;
  auto loss_and_pattern = [&] {
    pattern.clear();
    double total = 0.0;
    for (std::size_t i = 0; i < spec.batch; ++i) {
      const auto a = branch_forward(firsts[i], params, cfg);
      const auto b = branch_forward(seconds[i], params, cfg);
      const auto h = siamese_forward(a.fused, b.fused, params);
      detail::append_pattern(a, pattern);
      detail::append_pattern(b, pattern);
      detail::append_pattern(h, pattern);
      total += pairwise_loss(prediction(h), labels[i]);
    }
    return total / static_cast<double>(spec.batch);
  };
  loss_and_pattern();
  const auto base_pattern = pattern;
  bool crossed = false;
  auto loss = [&] {
    const double l = loss_and_pattern();
    crossed = crossed || pattern != base_pattern;
    return l;
  };

  params.zero_grad();
  const double weight = 1.0 / static_cast<double>(spec.batch);
  for (std::size_t i = 0; i < spec.batch; ++i)
    pair_forward_backward(firsts[i], seconds[i], labels[i], params, cfg, weight);

  auto named = params.named_tensors();
  std::vector<ParamTensor *> tensors;
  for (auto &nt : named)
    tensors.push_back(nt.tensor);
  const auto numeric = finite_diff_grad(loss, tensors, spec.eps);
  if (crossed && draw < gradcheck_max_draws)
    continue;

  GradcheckReport report;
  report.pooling = mode;
  report.draws = draw;
  for (std::size_t t = 0; t < named.size(); ++t) {
    const Matrix &analytic = named[t].tensor->grad;
    report.parameters += analytic.size();
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      const double err = relative_error(analytic[i], numeric[t][i]);
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_tensor = named[t].name;
        report.worst_index = i;
        report.worst_analytic = analytic[i];
        report.worst_numeric = numeric[t][i];
      }
    }
  }
  params.zero_grad();
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
  }
}

} // namespace spsmvg
