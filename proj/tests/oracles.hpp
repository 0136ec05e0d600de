#pragma once

// Independent reference computations used by the unit and acceptance tests.

#include <cmath>
#include <vector>

#include "spsmvg/ranking.hpp"
#include "spsmvg/rng.hpp"
#include "spsmvg/training.hpp"

namespace spsmvg::testing {

/// Bradley-Terry log-likelihood of scores s under fractional win counts P.
inline double bt_log_likelihood(const WinMatrix &w, const std::vector<double> &s) {
  double ll = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i)
    for (std::size_t j = 0; j < w.size(); ++j)
      if (i != j)
        ll += w.p(i, j) * std::log(s[i] / (s[i] + s[j]));
  return ll;
}

/// Exhaustive search of the open 2-simplex on a grid of the given step.
inline std::vector<double> bt_grid_mle(const WinMatrix &w, double step = 1e-3) {
  const long n = std::lround(1.0 / step);
  std::vector<double> best(3), s(3);
  double best_ll = -INFINITY;
  for (long a = 1; a < n; ++a) {
    for (long b = 1; a + b < n; ++b) {
      s = {a * step, b * step, (n - a - b) * step};
      const double ll = bt_log_likelihood(w, s);
      if (ll > best_ll) {
        best_ll = ll;
        best = s;
      }
    }
  }
  return best;
}

inline WinMatrix random_win_matrix(Rng &rng, std::size_t m, double lo = 0.05, double hi = 0.95) {
  WinMatrix w{Matrix(m, m)};
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) {
      w.p(i, j) = rng.uniform(lo, hi);
      w.p(j, i) = 1.0 - w.p(i, j);
    }
  return w;
}

inline WinMatrix cyclic_win_matrix(double p) {
  WinMatrix w{Matrix(3, 3)};
  w.p(0, 1) = w.p(1, 2) = w.p(2, 0) = p;
  w.p(1, 0) = w.p(2, 1) = w.p(0, 2) = 1.0 - p;
  return w;
}

/// A dataset and hand-wired model whose prediction on pair k is exactly probs[k]
/// (up to rounding). Each image carries one deep scalar x; the graph branch is
/// switched off, attention is the identity, and the head computes
/// f = sigmoid(x_first - x_second). Pair k compares image k + 1 with a
/// reference image at x = 5.
struct EvaluationFixture {
  ModelConfig model;
  ModelParams params;
  Dataset data;
};

inline EvaluationFixture controlled_fixture(const std::vector<double> &probs, const std::vector<int> &labels) {
  EvaluationFixture fx;
  ViewConfig vc;
  vc.views = {ViewKind::deep, ViewKind::color};
  vc.deep_dim = 1;
  vc.color_bins = 2;
  vc.common_dim = 4;
  fx.model.views = vc;
  fx.model.hyper = {2, 4, 1, 4, 2, 2, PoolingMode::null};
  fx.model.lambda = 0.5;
  fx.params = ModelParams(fx.model);

  auto &deep = fx.params.projections[0];
  deep.weight.value(0, 0) = 1.0; // channel 0 carries x
  deep.bias.value[1] = 1.0;      // keeps the row away from zero
  fx.params.projections[1].bias.value[3] = 1.0;
  const std::size_t half = 2 * 4; // flattened l x C of one branch
  fx.params.fc1_w.value(0, 0) = 1.0;
  fx.params.fc1_w.value(1, half) = 1.0;
  fx.params.fc2_w.value = Matrix::identity(2);
  fx.params.fc3_w.value = Matrix::identity(2);

  const double reference = 5.0;
  auto image = [&](double x) {
    return std::vector<RawView>{{ViewKind::deep, {x}}, {ViewKind::color, std::vector<double>(6, 0.5)}};
  };
  fx.data.series_ids = {"fixture"};
  fx.data.image_ids = {"reference"};
  fx.data.images = {image(reference)};
  for (std::size_t k = 0; k < probs.size(); ++k) {
    const double logit = std::log(probs[k] / (1.0 - probs[k]));
    fx.data.image_ids.push_back("img" + std::to_string(k));
    fx.data.images.push_back(image(reference + logit));
    fx.data.pairs.push_back({0, k + 1, 0, labels[k]});
  }
  return fx;
}

} // namespace spsmvg::testing
