#include <catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>

#include "oracles.hpp"
#include "spsmvg/ranking.hpp"
#include "spsmvg/training.hpp"

using namespace spsmvg;
using namespace spsmvg::testing;
using Catch::Approx;

TEST_CASE("two-item Bradley-Terry closed form") {
  WinMatrix w{Matrix{{0, 0.75}, {0.25, 0}}};
  const auto fit = fit_bradley_terry(w);
  CHECK(fit.converged);
  CHECK(fit.scores[0] == Approx(0.75).margin(1e-6));
  CHECK(fit.scores[1] == Approx(0.25).margin(1e-6));
  const auto r = rank_series(w);
  CHECK(r.order == std::vector<std::size_t>{0, 1});
  CHECK(r.best == 0);
}

TEST_CASE("symmetric matrices give uniform scores") {
  for (double p : {0.5, 0.6, 0.9}) {
    const auto fit = fit_bradley_terry(cyclic_win_matrix(p));
    for (double s : fit.scores)
      CHECK(std::abs(s - 1.0 / 3.0) <= 1e-8);
  }
  WinMatrix half{Matrix(4, 4, 0.5)};
  for (double s : fit_bradley_terry(half).scores)
    CHECK(s == Approx(0.25).margin(1e-12));
  const auto r = rank_series(cyclic_win_matrix(0.7));
  CHECK(r.order == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("Bradley-Terry agrees with the grid-search maximum likelihood") {
  Rng rng(2024);
  for (int trial = 0; trial < 15; ++trial) {
    const auto w = random_win_matrix(rng, 3);
    const auto fit = fit_bradley_terry(w);
    const auto grid = bt_grid_mle(w);
    for (std::size_t i = 0; i < 3; ++i)
      CHECK(std::abs(fit.scores[i] - grid[i]) <= 1e-3);
    CHECK(bt_log_likelihood(w, fit.scores) >= bt_log_likelihood(w, grid) - 1e-12);
  }
}

TEST_CASE("Bradley-Terry fit properties") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 2 + rng.below(7);
    const auto w = random_win_matrix(rng, m, 0.01, 0.99);
    const auto fit = fit_bradley_terry(w);
    REQUIRE(fit.converged);
    CHECK(std::accumulate(fit.scores.begin(), fit.scores.end(), 0.0) == Approx(1.0).margin(1e-9));
    for (double s : fit.scores)
      CHECK(s > 0.0);
    // A converged fit is a fixed point.
    const auto again = fit_bradley_terry(w, 1e-8, 1000, fit.scores);
    for (std::size_t i = 0; i < m; ++i)
      CHECK(std::abs(again.scores[i] - fit.scores[i]) < 1e-8);

    // Relabelling the photos relabels the scores.
    std::vector<std::size_t> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    WinMatrix permuted{Matrix(m, m)};
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j)
        permuted.p(i, j) = w.p(perm[i], perm[j]);
    const auto pfit = fit_bradley_terry(permuted);
    for (std::size_t i = 0; i < m; ++i)
      CHECK(pfit.scores[i] == Approx(fit.scores[perm[i]]).margin(1e-7));
    const auto r = rank_series(w);
    CHECK(r.best == perm[rank_series(permuted).best]);
  }
}

TEST_CASE("non-convergence is reported, not fatal") {
  Rng rng(8);
  const auto w = random_win_matrix(rng, 5);
  const auto fit = fit_bradley_terry(w, 1e-8, 1);
  CHECK_FALSE(fit.converged);
  CHECK(fit.iterations == 1);
  CHECK_FALSE(rank_series(w, 1e-8, 1).converged);
}

TEST_CASE("win matrix validation") {
  CHECK_THROWS_AS(fit_bradley_terry(WinMatrix{Matrix{{0, 0.6}, {0.6, 0}}}), EvaluationError);
  CHECK_THROWS_AS(fit_bradley_terry(WinMatrix{Matrix{{0, 1.0}, {0.0, 0}}}), EvaluationError);
  CHECK_THROWS_AS(fit_bradley_terry(WinMatrix{Matrix{{0}}}), EvaluationError);
  CHECK_THROWS_AS(fit_bradley_terry(WinMatrix{Matrix{{0, 0.6}, {0.4, 0}}}, 0.0), ConfigError);
}

TEST_CASE("selection rate") {
  auto result = [](std::size_t best) {
    SeriesResult r;
    r.best = best;
    return r;
  };
  const std::vector<SeriesResult> rs{result(0), result(1), result(2), result(0)};
  CHECK(selection_rate(rs, std::vector<std::size_t>{0, 1, 2, 0}) == 1.0);
  CHECK(selection_rate(rs, std::vector<std::size_t>{1, 0, 0, 1}) == 0.0);
  CHECK(selection_rate(rs, std::vector<std::size_t>{0, 1, 2, 3}) == 0.75);
  CHECK_THROWS_AS(selection_rate(rs, std::vector<std::size_t>{0, 1}), EvaluationError);
}

TEST_CASE("pairwise probabilities from a model") {
  ViewConfig vc;
  vc.views = {ViewKind::deep, ViewKind::color};
  vc.deep_dim = 4;
  vc.color_bins = 2;
  vc.common_dim = 4;
  const auto cfg = ModelConfig::defaults(vc);
  auto params = init_params(cfg, 1);
  Rng rng(3);
  std::vector<std::vector<RawView>> photos;
  for (int k = 0; k < 4; ++k) {
    std::vector<RawView> views;
    for (auto kind : vc.views) {
      RawView r{kind, std::vector<double>(vc.raw_dim(kind))};
      for (auto &x : r.values)
        x = rng.uniform(0.1, 1.0);
      views.push_back(r);
    }
    photos.push_back(views);
  }
  SECTION("an untrained model is uninformative") {
    const auto w = pairwise_probs(photos, params, cfg);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        CHECK(w.p(i, j) == (i == j ? 0.0 : 0.5));
  }
  SECTION("symmetrization makes P(i,j) + P(j,i) = 1") {
    for (auto *t : params.tensors())
      for (auto &v : t->value.data())
        v = rng.uniform(-1.0, 1.0);
    const auto w = pairwise_probs(photos, params, cfg);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        if (i != j)
          CHECK(w.p(i, j) + w.p(j, i) == Approx(1.0).margin(1e-15));
    CHECK_NOTHROW(rank_series(w));
  }
  CHECK_THROWS_AS(pairwise_probs(std::span(photos).first(1), params, cfg), EvaluationError);
}
