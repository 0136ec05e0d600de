#pragma once

// Global per-series ranking from pairwise win probabilities: the model is
// evaluated in both orders for every photo pair, the symmetrized
// probabilities are read as fractional win counts, and Bradley-Terry scores
// are fitted with the classical MM iteration.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "spsmvg/errors.hpp"
#include "spsmvg/model.hpp"

namespace spsmvg {

/// P(i, j) = probability photo i beats photo j; P(i, j) + P(j, i) = 1, diagonal 0.
struct WinMatrix {
  Matrix p;

  std::size_t size() const { return p.rows(); }

  void validate() const {
    const std::size_t m = p.rows();
    if (m < 2 || p.cols() != m)
      throw EvaluationError("win matrix must be square with at least 2 photos");
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        if (i == j)
          continue;
        if (!(p(i, j) > 0.0 && p(i, j) < 1.0))
          throw EvaluationError("win probability P(" + std::to_string(i) + "," + std::to_string(j) +
                                ") must lie in (0, 1)");
        if (std::abs(p(i, j) + p(j, i) - 1.0) > 1e-9)
          throw EvaluationError("win probabilities P(i,j) and P(j,i) must sum to 1");
      }
  }
};

struct BradleyTerryFit {
  std::vector<double> scores; // positive, sum 1
  std::size_t iterations = 0;
  bool converged = false;
};

struct SeriesResult {
  std::vector<double> scores;
  std::vector<std::size_t> order; // descending score, ascending index on ties
  std::size_t best = 0;
  bool converged = true;
};

/// Both orderings are evaluated because the concatenating head is not anti-symmetric.
inline WinMatrix pairwise_probs(std::span<const std::vector<RawView>> photos, const ModelParams &params,
                                const ModelConfig &cfg) {
  const std::size_t m = photos.size();
  if (m < 2)
    throw EvaluationError("a series needs at least 2 photos to rank");
  std::vector<BranchCache> branches;
  branches.reserve(m);
  for (const auto &views : photos)
    branches.push_back(branch_forward(views, params, cfg));
  WinMatrix w{Matrix(m, m)};
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      const double f_ij = prediction(siamese_forward(branches[i].fused, branches[j].fused, params)).f;
      const double f_ji = prediction(siamese_forward(branches[j].fused, branches[i].fused, params)).f;
      const double p = (f_ij + 1.0 - f_ji) / 2.0;
      w.p(i, j) = p;
      w.p(j, i) = 1.0 - p;
    }
  }
  return w;
}

/// MM iteration s_i <- W_i / sum_j n_ij / (s_i + s_j), with W_i = sum_j P(i, j)
/// and one comparison per pair (n_ij = P(i,j) + P(j,i)). Renormalized every
/// sweep; stops once no score moves by tol or more.
inline BradleyTerryFit fit_bradley_terry(const WinMatrix &w, double tol = 1e-8, std::size_t max_iter = 1000,
                                         std::vector<double> start = {}) {
  w.validate();
  if (!(tol > 0.0))
    throw ConfigError("Bradley-Terry tolerance must be positive");
  const std::size_t m = w.size();
  BradleyTerryFit fit;
  fit.scores = start.empty() ? std::vector<double>(m, 1.0 / static_cast<double>(m)) : std::move(start);
  if (fit.scores.size() != m)
    throw ConfigError("Bradley-Terry start vector has the wrong length");
  std::vector<double> wins(m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      if (i != j)
        wins[i] += w.p(i, j);

  std::vector<double> next(m);
  while (fit.iterations < max_iter) {
    ++fit.iterations;
    for (std::size_t i = 0; i < m; ++i) {
      double denom = 0.0;
      for (std::size_t j = 0; j < m; ++j)
        if (j != i)
          denom += (w.p(i, j) + w.p(j, i)) / (fit.scores[i] + fit.scores[j]);
      next[i] = wins[i] / denom;
    }
    const double total = std::accumulate(next.begin(), next.end(), 0.0);
    double delta = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      next[i] /= total;
      delta = std::max(delta, std::abs(next[i] - fit.scores[i]));
    }
    fit.scores = next;
    if (delta < tol) {
      fit.converged = true;
      break;
    }
  }
  return fit;
}

inline SeriesResult rank_series(const WinMatrix &w, double tol = 1e-8, std::size_t max_iter = 1000) {
  auto fit = fit_bradley_terry(w, tol, max_iter);
  SeriesResult r;
  r.scores = std::move(fit.scores);
  r.converged = fit.converged;
  r.order.resize(r.scores.size());
  std::iota(r.order.begin(), r.order.end(), 0);
  std::stable_sort(r.order.begin(), r.order.end(),
                   [&](std::size_t a, std::size_t b) { return r.scores[a] > r.scores[b]; });
  r.best = r.order.front();
  return r;
}

/// Fraction of series whose top-ranked photo is the ground-truth best.
inline double selection_rate(std::span<const SeriesResult> results, std::span<const std::size_t> ground_truth_best) {
  if (results.size() != ground_truth_best.size())
    throw EvaluationError("selection_rate: " + std::to_string(results.size()) + " results but " +
                          std::to_string(ground_truth_best.size()) + " ground-truth entries");
  if (results.empty())
    throw EvaluationError("selection_rate: no series");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < results.size(); ++i)
    hits += results[i].best == ground_truth_best[i];
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

} // namespace spsmvg
