#pragma once

// The multi-view graph over one image's views: cosine affinities normalized
// per row with softmax, thresholded at lambda (the central node's edges are
// always kept), then symmetrized and normalized as D^-1/2 (A + I) D^-1/2.
// build_graph/graph_backward chain the same steps with a cache so gradients
// reach the view matrix through the adjacency.

#include <cmath>
#include <span>
#include <string>

#include "spsmvg/errors.hpp"
#include "spsmvg/numerics.hpp"
#include "spsmvg/views.hpp"

namespace spsmvg {

struct AffinityMatrix {
  Matrix values;
  double lambda = 0.0;
  std::size_t central_index = 0;
};

struct NormalizedAdjacency {
  Matrix values;
};

namespace detail {

inline double squared_norm(std::span<const double> u) {
  double s = 0.0;
  for (double x : u)
    s += x * x;
  return s;
}

inline double dot(std::span<const double> u, std::span<const double> v) {
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i)
    s += u[i] * v[i];
  return s;
}

} // namespace detail

inline double cosine_sim(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size())
    throw DimensionError("cosine_sim: length mismatch " + std::to_string(u.size()) + " vs " +
                         std::to_string(v.size()));
  const double nu = std::sqrt(detail::squared_norm(u));
  const double nv = std::sqrt(detail::squared_norm(v));
  if (nu == 0.0 || nv == 0.0)
    throw DegenerateViewError("cosine_sim: zero-norm vector");
  return std::clamp(detail::dot(u, v) / (nu * nv), -1.0, 1.0);
}

inline Matrix cosine_matrix(const Matrix &v) {
  const std::size_t l = v.rows();
  Matrix sims(l, l);
  for (std::size_t p = 0; p < l; ++p) {
    sims(p, p) = 1.0;
    for (std::size_t q = p + 1; q < l; ++q)
      sims(p, q) = sims(q, p) = cosine_sim(v.row(p), v.row(q));
  }
  return sims;
}

/// Row-softmax of pairwise cosine similarities (self-similarity included).
inline AffinityMatrix build_affinity(const ViewMatrix &v) {
  return {softmax_row(cosine_matrix(v.values)), 0.0, v.central_index};
}

inline bool edge_is_protected(std::size_t p, std::size_t q, std::size_t central) {
  return p == q || p == central || q == central;
}

/// Entries below lambda become 0 except the diagonal and the central node's
/// row and column. Rows are not renormalized.
inline AffinityMatrix apply_threshold(const AffinityMatrix &a, double lambda, std::size_t central_index) {
  if (!(lambda >= 0.0 && lambda < 1.0))
    throw ConfigError("graph threshold lambda must lie in [0, 1), got " + std::to_string(lambda));
  AffinityMatrix out{a.values, lambda, central_index};
  const std::size_t l = out.values.rows();
  for (std::size_t p = 0; p < l; ++p)
    for (std::size_t q = 0; q < l; ++q)
      if (!edge_is_protected(p, q, central_index) && out.values(p, q) < lambda)
        out.values(p, q) = 0.0;
  return out;
}

// (A + A^T) / 2 + I
inline Matrix symmetrized_with_self_loops(const Matrix &a) {
  const std::size_t l = a.rows();
  Matrix t(l, l);
  for (std::size_t p = 0; p < l; ++p)
    for (std::size_t q = 0; q < l; ++q)
      t(p, q) = 0.5 * (a(p, q) + a(q, p)) + (p == q ? 1.0 : 0.0);
  return t;
}

/// D^-1/2 T D^-1/2 for an already self-looped symmetric T, D = diag(row sums of T).
inline Matrix symmetric_normalize(const Matrix &t) {
  const std::size_t l = t.rows();
  std::vector<double> inv_sqrt(l);
  for (std::size_t p = 0; p < l; ++p) {
    double d = 0.0;
    for (std::size_t q = 0; q < l; ++q)
      d += t(p, q);
    inv_sqrt[p] = 1.0 / std::sqrt(d);
  }
  Matrix s(l, l);
  for (std::size_t p = 0; p < l; ++p)
    for (std::size_t q = 0; q < l; ++q)
      s(p, q) = inv_sqrt[p] * t(p, q) * inv_sqrt[q];
  return s;
}

inline NormalizedAdjacency normalize(const AffinityMatrix &thresholded) {
  return {symmetric_normalize(symmetrized_with_self_loops(thresholded.values))};
}

// ---------------------------------------------------------------------------
// Differentiable chain V -> S
// ---------------------------------------------------------------------------

struct GraphCache {
  Matrix sims;         // cosine similarities
  Matrix affinity;     // row softmax of sims
  Matrix keep;         // 1 where the thresholded affinity retains the entry
  Matrix self_looped;  // (A_thr + A_thr^T)/2 + I
  std::vector<double> degree;
  NormalizedAdjacency adjacency;
};

inline GraphCache build_graph(const ViewMatrix &v, double lambda) {
  GraphCache g;
  g.sims = cosine_matrix(v.values);
  g.affinity = softmax_row(g.sims);
  const auto thr = apply_threshold({g.affinity, 0.0, v.central_index}, lambda, v.central_index);
  const std::size_t l = g.affinity.rows();
  g.keep = Matrix(l, l);
  for (std::size_t i = 0; i < g.keep.size(); ++i)
    g.keep[i] = thr.values[i] != 0.0 ? 1.0 : 0.0;
  g.self_looped = symmetrized_with_self_loops(thr.values);
  g.degree.assign(l, 0.0);
  for (std::size_t p = 0; p < l; ++p)
    for (std::size_t q = 0; q < l; ++q)
      g.degree[p] += g.self_looped(p, q);
  g.adjacency = {symmetric_normalize(g.self_looped)};
  return g;
}

/// Gradient of a scalar with respect to the view matrix, given dL/dS.
inline Matrix graph_backward(const GraphCache &g, const Matrix &v, const Matrix &d_adjacency) {
  const std::size_t l = v.rows();
  // S_pq = T_pq / sqrt(d_p d_q), d_p = sum_q T_pq.
  std::vector<double> inv_sqrt(l);
  for (std::size_t p = 0; p < l; ++p)
    inv_sqrt[p] = 1.0 / std::sqrt(g.degree[p]);
  Matrix d_t(l, l);
  std::vector<double> d_degree(l, 0.0);
  for (std::size_t p = 0; p < l; ++p) {
    for (std::size_t q = 0; q < l; ++q) {
      const double ds = d_adjacency(p, q);
      d_t(p, q) = ds * inv_sqrt[p] * inv_sqrt[q];
      // dS_pq/dd_p and dS_pq/dd_q, both -1/2 S_pq / d
      const double s = g.adjacency.values(p, q);
      d_degree[p] += -0.5 * ds * s / g.degree[p];
      d_degree[q] += -0.5 * ds * s / g.degree[q];
    }
  }
  for (std::size_t p = 0; p < l; ++p)
    for (std::size_t q = 0; q < l; ++q)
      d_t(p, q) += d_degree[p];
  // T = (A + A^T)/2 + I, then the threshold mask.
  Matrix d_affinity(l, l);
  for (std::size_t p = 0; p < l; ++p)
    for (std::size_t q = 0; q < l; ++q)
      d_affinity(p, q) = 0.5 * (d_t(p, q) + d_t(q, p)) * g.keep(p, q);
  const Matrix d_sims = softmax_row_backward(g.affinity, d_affinity);

  // cos(u, w) = u.w / (|u||w|);  d cos / du = w/(|u||w|) - cos * u/|u|^2
  Matrix dv(l, v.cols());
  std::vector<double> norms(l);
  for (std::size_t p = 0; p < l; ++p)
    norms[p] = std::sqrt(detail::squared_norm(v.row(p)));
  for (std::size_t p = 0; p < l; ++p) {
    for (std::size_t q = 0; q < l; ++q) {
      if (p == q)
        continue; // self-similarity is constant
      const double gsum = d_sims(p, q);
      if (gsum == 0.0)
        continue;
      const double c = g.sims(p, q);
      if (c == 1.0 || c == -1.0)
        continue; // clamped
      auto u = v.row(p);
      auto w = v.row(q);
      auto du = dv.row(p);
      const double inv_uw = 1.0 / (norms[p] * norms[q]);
      const double inv_uu = 1.0 / (norms[p] * norms[p]);
      for (std::size_t k = 0; k < v.cols(); ++k)
        du[k] += gsum * (w[k] * inv_uw - c * u[k] * inv_uu);
      auto dw = dv.row(q);
      const double inv_ww = 1.0 / (norms[q] * norms[q]);
      for (std::size_t k = 0; k < v.cols(); ++k)
        dw[k] += gsum * (u[k] * inv_uw - c * w[k] * inv_ww);
    }
  }
  return dv;
}

} // namespace spsmvg
