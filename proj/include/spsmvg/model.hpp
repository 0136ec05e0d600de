#pragma once

// The differentiable core. One image ("branch") goes
//
//   raw views -> projections -> V (l x C)
//   V -> graph S -> F_G = ReLU(S ReLU(S V W1^T) W2^T)          (graph path)
//   V -> pool -> a = sigmoid(W2a ReLU(W1a p)) -> F_S = a o V   (attention path)
//   fused = F_G + F_S
//
// and a pair of branches sharing one ModelParams feeds the three-layer head
// whose two-way softmax gives f = P(first image preferred).

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "spsmvg/errors.hpp"
#include "spsmvg/mvgraph.hpp"
#include "spsmvg/numerics.hpp"
#include "spsmvg/views.hpp"

namespace spsmvg {

enum class PoolingMode { null = 0, max = 1, avg = 2, max_avg = 3 };

inline std::string_view to_string(PoolingMode m) {
  switch (m) {
  case PoolingMode::null: return "null";
  case PoolingMode::max: return "max";
  case PoolingMode::avg: return "avg";
  case PoolingMode::max_avg: return "max_avg";
  }
  return "?";
}

inline PoolingMode parse_pooling_mode(std::string_view s) {
  if (s == "null") return PoolingMode::null;
  if (s == "max") return PoolingMode::max;
  if (s == "avg") return PoolingMode::avg;
  if (s == "max_avg" || s == "max+avg") return PoolingMode::max_avg;
  throw ConfigError("unknown pooling mode '" + std::string(s) + "' (expected null, max, avg or max_avg)");
}

inline constexpr PoolingMode all_pooling_modes[] = {PoolingMode::null, PoolingMode::max, PoolingMode::avg,
                                                    PoolingMode::max_avg};

struct Hyper {
  std::size_t views = 4;       // l
  std::size_t common_dim = 16; // C, also the GCN output width
  std::size_t gcn_hidden = 16;
  std::size_t reduction = 4;   // attention bottleneck is C / reduction
  std::size_t fc1 = 128;
  std::size_t fc2 = 32;
  PoolingMode pooling = PoolingMode::max_avg;

  std::size_t gcn_out() const { return common_dim; }
  std::size_t bottleneck() const { return common_dim / reduction; }
  std::size_t head_input() const { return 2 * views * common_dim; }

  void validate() const {
    if (views == 0 || common_dim == 0 || gcn_hidden == 0 || reduction == 0 || fc1 == 0 || fc2 == 0)
      throw ConfigError("all model dimensions must be positive");
    if (common_dim % reduction != 0)
      throw ConfigError("common_dim " + std::to_string(common_dim) + " is not divisible by the reduction ratio " +
                        std::to_string(reduction));
  }

  /// Head widths scale with the input: fc1 = 2lC, fc2 = lC/2.
  static Hyper defaults_for(const ViewConfig &vc, PoolingMode pooling = PoolingMode::max_avg) {
    Hyper h;
    h.views = vc.view_count();
    h.common_dim = vc.common_dim;
    h.gcn_hidden = vc.common_dim;
    h.reduction = 4;
    h.fc1 = 2 * h.views * h.common_dim;
    h.fc2 = std::max<std::size_t>(1, h.views * h.common_dim / 2);
    h.pooling = pooling;
    return h;
  }

  friend bool operator==(const Hyper &, const Hyper &) = default;
};

/// Everything that shapes the network: which views, their sizes, widths, and the graph threshold.
struct ModelConfig {
  ViewConfig views;
  Hyper hyper;
  double lambda = 0.25;

  static ModelConfig defaults(const ViewConfig &vc, PoolingMode pooling = PoolingMode::max_avg) {
    return {vc, Hyper::defaults_for(vc, pooling), 1.0 / static_cast<double>(vc.view_count())};
  }

  void validate() const {
    views.validate();
    hyper.validate();
    if (hyper.views != views.view_count() || hyper.common_dim != views.common_dim)
      throw ConfigError("hyper-parameters disagree with the view configuration");
    if (!(lambda >= 0.0 && lambda < 1.0))
      throw ConfigError("graph threshold lambda must lie in [0, 1)");
  }
};

struct NamedTensor {
  std::string name;
  ParamTensor *tensor;
  bool decays; // weights decay, biases do not
};

/// All trainable tensors. Both siamese branches read the same instance.
struct ModelParams {
  std::vector<Projection> projections;
  ParamTensor gcn1;    // d_hidden x C
  ParamTensor gcn2;    // C x d_hidden
  ParamTensor att1;    // C/r x C
  ParamTensor att2;    // C x C/r
  ParamTensor fc1_w, fc1_b;
  ParamTensor fc2_w, fc2_b;
  ParamTensor fc3_w, fc3_b;

  ModelParams() = default;
  explicit ModelParams(const ModelConfig &cfg) {
    cfg.validate();
    const auto &h = cfg.hyper;
    for (auto k : cfg.views.views)
      projections.emplace_back(h.common_dim, cfg.views.raw_dim(k));
    gcn1 = ParamTensor(h.gcn_hidden, h.common_dim);
    gcn2 = ParamTensor(h.gcn_out(), h.gcn_hidden);
    att1 = ParamTensor(h.bottleneck(), h.common_dim);
    att2 = ParamTensor(h.common_dim, h.bottleneck());
    fc1_w = ParamTensor(h.fc1, h.head_input());
    fc1_b = ParamTensor(h.fc1, 1);
    fc2_w = ParamTensor(h.fc2, h.fc1);
    fc2_b = ParamTensor(h.fc2, 1);
    fc3_w = ParamTensor(2, h.fc2);
    fc3_b = ParamTensor(2, 1);
  }

  std::vector<NamedTensor> named_tensors() {
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < projections.size(); ++i) {
      out.push_back({"proj" + std::to_string(i) + ".weight", &projections[i].weight, true});
      out.push_back({"proj" + std::to_string(i) + ".bias", &projections[i].bias, false});
    }
    out.push_back({"gcn1", &gcn1, true});
    out.push_back({"gcn2", &gcn2, true});
    out.push_back({"att1", &att1, true});
    out.push_back({"att2", &att2, true});
    out.push_back({"fc1.weight", &fc1_w, true});
    out.push_back({"fc1.bias", &fc1_b, false});
    out.push_back({"fc2.weight", &fc2_w, true});
    out.push_back({"fc2.bias", &fc2_b, false});
    out.push_back({"fc3.weight", &fc3_w, true});
    out.push_back({"fc3.bias", &fc3_b, false});
    return out;
  }

  std::vector<ParamTensor *> tensors() {
    std::vector<ParamTensor *> out;
    for (auto &nt : named_tensors())
      out.push_back(nt.tensor);
    return out;
  }

  void zero_grad() {
    for (auto *t : tensors())
      t->zero_grad();
  }

  std::size_t scalar_count() {
    std::size_t n = 0;
    for (auto *t : tensors())
      n += t->value.size();
    return n;
  }

  bool values_equal(const ModelParams &o) const {
    auto &self = const_cast<ModelParams &>(*this);
    auto &other = const_cast<ModelParams &>(o);
    auto a = self.tensors();
    auto b = other.tensors();
    if (a.size() != b.size())
      return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (!(a[i]->value == b[i]->value))
        return false;
    return true;
  }
};

// ---------------------------------------------------------------------------
// Graph convolution
// ---------------------------------------------------------------------------

struct GcnCache {
  Matrix adjacency, input, sv, pre1, hidden, sh, pre2, output;
};

struct GcnGrads {
  Matrix d_adjacency;
  Matrix d_input;
};

inline GcnCache gcn_forward(const NormalizedAdjacency &s, const Matrix &v, const ModelParams &params) {
  if (s.values.rows() != v.rows() || s.values.cols() != v.rows())
    throw ConfigError("gcn: adjacency " + s.values.shape() + " does not match view matrix " + v.shape());
  if (params.gcn1.value.cols() != v.cols())
    throw ConfigError("gcn: layer-1 weight " + params.gcn1.value.shape() + " does not match view matrix " +
                      v.shape());
  GcnCache c;
  c.adjacency = s.values;
  c.input = v;
  c.sv = matmul(s.values, v);
  c.pre1 = matmul_nt(c.sv, params.gcn1.value);
  c.hidden = relu(c.pre1);
  c.sh = matmul(s.values, c.hidden);
  c.pre2 = matmul_nt(c.sh, params.gcn2.value);
  c.output = relu(c.pre2);
  return c;
}

inline GcnGrads gcn_backward(const GcnCache &c, const Matrix &d_output, ModelParams &params) {
  const Matrix d_pre2 = relu_backward(c.pre2, d_output);
  params.gcn2.grad += matmul_tn(d_pre2, c.sh);
  const Matrix d_sh = matmul(d_pre2, params.gcn2.value);
  GcnGrads g;
  g.d_adjacency = matmul_nt(d_sh, c.hidden);
  const Matrix d_hidden = matmul_tn(c.adjacency, d_sh);
  const Matrix d_pre1 = relu_backward(c.pre1, d_hidden);
  params.gcn1.grad += matmul_tn(d_pre1, c.sv);
  const Matrix d_sv = matmul(d_pre1, params.gcn1.value);
  g.d_adjacency += matmul_nt(d_sv, c.input);
  g.d_input = matmul_tn(c.adjacency, d_sv);
  return g;
}

// ---------------------------------------------------------------------------
// Channel self-attention
// ---------------------------------------------------------------------------

struct AttentionCache {
  PoolingMode mode = PoolingMode::null;
  Matrix input;
  Matrix pooled; // C x 1
  std::vector<std::size_t> argmax;
  Matrix pre1, hidden, pre2; // bottleneck activations
  Matrix gate;               // C x 1, the channel attention a
  Matrix output;
};

inline AttentionCache attention_forward(const Matrix &f, const ModelParams &params, PoolingMode mode) {
  AttentionCache c;
  c.mode = mode;
  c.input = f;
  const std::size_t l = f.rows(), ch = f.cols();
  if (mode == PoolingMode::null) {
    c.gate = Matrix(ch, 1, 1.0);
    c.output = f;
    return c;
  }
  if (params.att1.value.cols() != ch || params.att2.value.rows() != ch)
    throw ConfigError("attention: weights " + params.att1.value.shape() + ", " + params.att2.value.shape() +
                      " do not match input " + f.shape());
  c.pooled = Matrix(ch, 1);
  if (mode == PoolingMode::max || mode == PoolingMode::max_avg) {
    c.argmax.assign(ch, 0);
    for (std::size_t k = 0; k < ch; ++k) {
      for (std::size_t i = 1; i < l; ++i)
        if (f(i, k) > f(c.argmax[k], k))
          c.argmax[k] = i; // strict: ties stay at the lowest row
      c.pooled[k] += f(c.argmax[k], k);
    }
  }
  if (mode == PoolingMode::avg || mode == PoolingMode::max_avg) {
    for (std::size_t k = 0; k < ch; ++k) {
      double s = 0.0;
      for (std::size_t i = 0; i < l; ++i)
        s += f(i, k);
      c.pooled[k] += s / static_cast<double>(l);
    }
  }
  c.pre1 = matmul(params.att1.value, c.pooled);
  c.hidden = relu(c.pre1);
  c.pre2 = matmul(params.att2.value, c.hidden);
  c.gate = sigmoid(c.pre2);
  c.output = f;
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t k = 0; k < ch; ++k)
      c.output(i, k) *= c.gate[k];
  return c;
}

/// Returns dL/dF; accumulates attention weight gradients unless the mode is null.
inline Matrix attention_backward(const AttentionCache &c, const Matrix &d_output, ModelParams &params) {
  if (c.mode == PoolingMode::null)
    return d_output;
  const std::size_t l = c.input.rows(), ch = c.input.cols();
  Matrix d_input(l, ch);
  Matrix d_gate(ch, 1);
  for (std::size_t i = 0; i < l; ++i) {
    for (std::size_t k = 0; k < ch; ++k) {
      d_input(i, k) = c.gate[k] * d_output(i, k);
      d_gate[k] += c.input(i, k) * d_output(i, k);
    }
  }
  const Matrix d_pre2 = sigmoid_backward(c.gate, d_gate);
  params.att2.grad += matmul_nt(d_pre2, c.hidden);
  const Matrix d_hidden = matmul_tn(params.att2.value, d_pre2);
  const Matrix d_pre1 = relu_backward(c.pre1, d_hidden);
  params.att1.grad += matmul_nt(d_pre1, c.pooled);
  const Matrix d_pooled = matmul_tn(params.att1.value, d_pre1);
  if (c.mode == PoolingMode::max || c.mode == PoolingMode::max_avg)
    for (std::size_t k = 0; k < ch; ++k)
      d_input(c.argmax[k], k) += d_pooled[k];
  if (c.mode == PoolingMode::avg || c.mode == PoolingMode::max_avg)
    for (std::size_t i = 0; i < l; ++i)
      for (std::size_t k = 0; k < ch; ++k)
        d_input(i, k) += d_pooled[k] / static_cast<double>(l);
  return d_input;
}

inline Matrix fuse(const Matrix &graph_features, const Matrix &attended_features) {
  if (!graph_features.same_shape(attended_features))
    throw ConfigError("fuse: shape mismatch " + graph_features.shape() + " vs " + attended_features.shape());
  return graph_features + attended_features;
}

// ---------------------------------------------------------------------------
// One branch: raw views -> fused l x C representation
// ---------------------------------------------------------------------------

struct BranchCache {
  ViewMatrix views;
  GraphCache graph;
  GcnCache gcn;
  AttentionCache attention;
  Matrix fused;
};

inline BranchCache branch_forward(std::span<const RawView> raws, const ModelParams &params,
                                  const ModelConfig &cfg) {
  BranchCache b;
  b.views = build_view_matrix(raws, params.projections, cfg.views);
  b.graph = build_graph(b.views, cfg.lambda);
  b.gcn = gcn_forward(b.graph.adjacency, b.views.values, params);
  b.attention = attention_forward(b.views.values, params, cfg.hyper.pooling);
  b.fused = fuse(b.gcn.output, b.attention.output);
  return b;
}

inline void branch_backward(const BranchCache &b, std::span<const RawView> raws, const Matrix &d_fused,
                            ModelParams &params) {
  // d fused flows unchanged into both summands.
  GcnGrads g = gcn_backward(b.gcn, d_fused, params);
  Matrix d_views = attention_backward(b.attention, d_fused, params);
  d_views += g.d_input;
  d_views += graph_backward(b.graph, b.views.values, g.d_adjacency);
  build_view_matrix_backward(raws, d_views, params.projections);
}

// ---------------------------------------------------------------------------
// Siamese head and loss
// ---------------------------------------------------------------------------

struct HeadCache {
  Matrix input; // 2lC x 1
  Matrix pre1, act1, pre2, act2, logits;
  double prob_first = 0.5; // softmax(logits)[0], unclamped
};

inline constexpr double probability_floor = 1e-12;

struct PairPrediction {
  double f = 0.5; // in (0, 1)
};

inline HeadCache siamese_forward(const Matrix &fused_first, const Matrix &fused_second, const ModelParams &params) {
  if (!fused_first.same_shape(fused_second))
    throw ConfigError("siamese: branch shapes differ " + fused_first.shape() + " vs " + fused_second.shape());
  const std::size_t half = fused_first.size();
  if (params.fc1_w.value.cols() != 2 * half)
    throw ConfigError("siamese: fc1 expects input width " + std::to_string(params.fc1_w.value.cols()) + ", got " +
                      std::to_string(2 * half));
  HeadCache h;
  h.input = Matrix(2 * half, 1);
  std::copy(fused_first.data().begin(), fused_first.data().end(), h.input.data().begin());
  std::copy(fused_second.data().begin(), fused_second.data().end(), h.input.data().begin() + half);
  h.pre1 = matmul(params.fc1_w.value, h.input) + params.fc1_b.value;
  h.act1 = relu(h.pre1);
  h.pre2 = matmul(params.fc2_w.value, h.act1) + params.fc2_b.value;
  h.act2 = relu(h.pre2);
  h.logits = matmul(params.fc3_w.value, h.act2) + params.fc3_b.value;
  // Two-way softmax; its first component is sigmoid(l0 - l1).
  h.prob_first = sigmoid(h.logits[0] - h.logits[1]);
  return h;
}

inline PairPrediction prediction(const HeadCache &h) {
  return {std::clamp(h.prob_first, probability_floor, 1.0 - probability_floor)};
}

struct HeadGrads {
  Matrix d_first, d_second;
};

inline HeadGrads siamese_backward(const HeadCache &h, double d_f, ModelParams &params) {
  const double p = h.prob_first;
  const double dl = d_f * p * (1.0 - p);
  Matrix d_logits(2, 1);
  d_logits[0] = dl;
  d_logits[1] = -dl;
  params.fc3_w.grad += matmul_nt(d_logits, h.act2);
  params.fc3_b.grad += d_logits;
  const Matrix d_pre2 = relu_backward(h.pre2, matmul_tn(params.fc3_w.value, d_logits));
  params.fc2_w.grad += matmul_nt(d_pre2, h.act1);
  params.fc2_b.grad += d_pre2;
  const Matrix d_pre1 = relu_backward(h.pre1, matmul_tn(params.fc2_w.value, d_pre2));
  params.fc1_w.grad += matmul_nt(d_pre1, h.input);
  params.fc1_b.grad += d_pre1;
  const Matrix d_input = matmul_tn(params.fc1_w.value, d_pre1);
  const std::size_t half = d_input.size() / 2;
  HeadGrads g;
  g.d_first = Matrix(h.input.size() / 2, 1);
  g.d_second = Matrix(h.input.size() / 2, 1);
  std::copy(d_input.data().begin(), d_input.data().begin() + half, g.d_first.data().begin());
  std::copy(d_input.data().begin() + half, d_input.data().end(), g.d_second.data().begin());
  return g;
}

/// Binary cross-entropy of one prediction; y = 1 means the first image wins.
inline double pairwise_loss(PairPrediction pred, int y) {
  const double f = std::clamp(pred.f, probability_floor, 1.0 - probability_floor);
  return y == 1 ? -std::log(f) : -std::log(1.0 - f);
}

inline double pairwise_loss_backward(PairPrediction pred, int y) {
  const double f = std::clamp(pred.f, probability_floor, 1.0 - probability_floor);
  return y == 1 ? -1.0 / f : 1.0 / (1.0 - f);
}

inline double batch_loss(std::span<const PairPrediction> preds, std::span<const int> labels) {
  if (preds.size() != labels.size() || preds.empty())
    throw EvaluationError("batch_loss: need equal, non-empty prediction and label lists");
  double s = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    s += pairwise_loss(preds[i], labels[i]);
  return s / static_cast<double>(preds.size());
}

// ---------------------------------------------------------------------------
// Whole pair
// ---------------------------------------------------------------------------

inline PairPrediction predict_pair(std::span<const RawView> first, std::span<const RawView> second,
                                   const ModelParams &params, const ModelConfig &cfg) {
  const auto a = branch_forward(first, params, cfg);
  const auto b = branch_forward(second, params, cfg);
  return prediction(siamese_forward(a.fused, b.fused, params));
}

/// Forward + backward for one labelled pair. Gradients of `weight * loss`
/// are accumulated into params; returns the unweighted loss and prediction.
struct PairStep {
  double loss = 0.0;
  PairPrediction prediction;
};

inline PairStep pair_forward_backward(std::span<const RawView> first, std::span<const RawView> second, int y,
                                      ModelParams &params, const ModelConfig &cfg, double weight) {
  const auto a = branch_forward(first, params, cfg);
  const auto b = branch_forward(second, params, cfg);
  const auto head = siamese_forward(a.fused, b.fused, params);
  PairStep out;
  out.prediction = prediction(head);
  out.loss = pairwise_loss(out.prediction, y);
  const double d_f = weight * pairwise_loss_backward(out.prediction, y);
  const HeadGrads g = siamese_backward(head, d_f, params);
  const Matrix d_a(a.fused.rows(), a.fused.cols(), g.d_first.data());
  const Matrix d_b(b.fused.rows(), b.fused.cols(), g.d_second.data());
  branch_backward(a, first, d_a, params);
  branch_backward(b, second, d_b, params);
  return out;
}

} // namespace spsmvg
