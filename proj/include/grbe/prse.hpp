#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "grbe/graph.hpp"
#include "grbe/model.hpp"

namespace grbe {

struct ConcreteSampleConfig {
  double temperature = 1.0;
  bool hard_eval = false;  // eval mode: threshold at 0.5, no noise

  void validate() const { require(temperature > 0.0, "sampling: temperature must be positive"); }
};

struct ContrastiveConfig {
  double tau = 0.5;
  double positive_keep_prob = 0.5;
  double negative_keep_prob = 0.5;
  bool l2_normalize = true;

  void validate() const {
    require(tau > 0.0, "contrastive: tau must be positive");
    require(positive_keep_prob >= 0.0 && positive_keep_prob <= 1.0, "contrastive: keep probability outside [0,1]");
    require(negative_keep_prob >= 0.0 && negative_keep_prob <= 1.0, "contrastive: keep probability outside [0,1]");
  }
};

// ---------------------------------------------------------------------------
// Concrete (binary) relaxation of an inclusion probability p with noise
// u ~ Uniform(0,1):
//   b = sigmoid((logit(p) + logit(u)) / t)
// The threshold event b > 0.5 is logit(p) + logit(u) > 0, i.e. u > 1 - p, so
// the hard sample rate equals p for every temperature. p is clamped to
// [1e-6, 1 - 1e-6] before the logit; as t -> 0 the relaxation sharpens to the
// hard indicator.
// ---------------------------------------------------------------------------

constexpr double kProbClampLo = 1e-6;
constexpr double kProbClampHi = 1.0 - 1e-6;

inline double concrete_relaxed(double p, double u, double temperature) {
  const double m = p < kProbClampLo ? kProbClampLo : (p > kProbClampHi ? kProbClampHi : p);
  const double lm = std::log(m) - std::log(1.0 - m);
  const double lu = std::log(u) - std::log(1.0 - u);
  return ad::sigmoid_scalar((lm + lu) * (1.0 / temperature));
}

/// Tape version of the same formula, differentiable in the probabilities.
/// `logit_noise[e]` must be logit(u_e) precomputed by the caller.
inline ad::Value concrete_relax_tape(ad::Tape& tape, const ad::Value& probs,
                                     const std::vector<double>& logit_noise, double temperature) {
  require(probs.cols() == 1, "concrete_relax: probabilities must be a column");
  require(static_cast<int>(logit_noise.size()) == probs.rows(), "concrete_relax: noise length mismatch");
  require(temperature > 0.0, "concrete_relax: temperature must be positive");
  ad::Value m = ad::clamp(probs, kProbClampLo, kProbClampHi);
  ad::Value ones = tape.constant(Tensor::full(probs.rows(), 1, 1.0));
  ad::Value logit_m = ad::sub(ad::log(m), ad::log(ad::sub(ones, m)));
  ad::Value z = ad::add(logit_m, tape.constant(Tensor::column(logit_noise)));
  return ad::sigmoid(ad::mul_scalar(z, 1.0 / temperature));
}

inline double logit_of_noise(double u) { return std::log(u) - std::log(1.0 - u); }

/// Draw a rationale/environment split from per-edge probabilities.
/// Train mode: concrete relaxation (relaxed gates, hard = gate > 0.5 routed
/// through the random source so record/replay can freeze it).
/// Eval-hard mode: deterministic threshold, relaxed == hard.
template <class Rng>
SubgraphSplit sample_rationale(const Graph& g, const std::vector<double>& mask,
                               const ConcreteSampleConfig& cfg, Rng& rng) {
  cfg.validate();
  require(static_cast<int>(mask.size()) == g.edge_count(), "sample_rationale: mask length != edge_count");
  for (double p : mask) require(p >= 0.0 && p <= 1.0, "sample_rationale: probability outside [0,1]");
  std::vector<double> relaxed(mask.size());
  std::vector<std::uint8_t> hard(mask.size());
  if (cfg.hard_eval) {
    for (std::size_t e = 0; e < mask.size(); ++e) {
      hard[e] = mask[e] > 0.5 ? 1 : 0;
      relaxed[e] = hard[e] ? 1.0 : 0.0;
    }
  } else {
    for (std::size_t e = 0; e < mask.size(); ++e)
      relaxed[e] = concrete_relaxed(mask[e], rng.uniform_open01(), cfg.temperature);
    hard = rng.threshold_bits(relaxed);
  }
  return partition(g, std::move(hard), std::move(relaxed));
}

// ---------------------------------------------------------------------------
// Sparsity regularizer: | mean(mask) - r_s |.
// ---------------------------------------------------------------------------

inline double sparsity_loss_value(const std::vector<double>& mask, double target) {
  require(!mask.empty(), "sparsity_loss: empty mask");
  double s = 0.0;
  for (double m : mask) s += m;
  return std::fabs(s / static_cast<double>(mask.size()) - target);
}

inline ad::Value sparsity_loss(ad::Tape& tape, const ad::Value& mask, double target) {
  require(mask.data().size() > 0, "sparsity_loss: empty mask");
  return ad::abs(ad::sub(ad::mean(mask), tape.constant(target)));
}

// ---------------------------------------------------------------------------
// Structural augmentations for the contrastive pair construction.
// A positive keeps the rationale intact and thins the environment; the
// negative keeps the environment intact and thins the rationale. Nodes on the
// perturbed side that lose every incident edge are dropped.
// ---------------------------------------------------------------------------

namespace detail {
/// Assemble a graph from the parent keeping `edge_ids` (parent edge indices);
/// nodes with side bit == keep_side survive unconditionally, all others only
/// if they still touch an edge.
inline Graph subgraph_from_edges(const SubgraphSplit& s, const std::vector<int>& edge_ids, std::uint8_t keep_side) {
  const Graph& g = *s.parent;
  const std::vector<std::uint8_t> side = node_sides(s);
  std::vector<std::uint8_t> keep(static_cast<std::size_t>(g.node_count), 0);
  for (int v = 0; v < g.node_count; ++v)
    if (side[static_cast<std::size_t>(v)] == keep_side) keep[static_cast<std::size_t>(v)] = 1;
  for (int e : edge_ids) {
    keep[static_cast<std::size_t>(g.edges[static_cast<std::size_t>(e)].first)] = 1;
    keep[static_cast<std::size_t>(g.edges[static_cast<std::size_t>(e)].second)] = 1;
  }
  std::vector<int> nodes;
  std::vector<int> local(static_cast<std::size_t>(g.node_count), -1);
  for (int v = 0; v < g.node_count; ++v)
    if (keep[static_cast<std::size_t>(v)]) {
      local[static_cast<std::size_t>(v)] = static_cast<int>(nodes.size());
      nodes.push_back(v);
    }
  if (nodes.empty()) {
    // Perturbation erased the whole graph (one side empty, the other fully
    // thinned). Degenerate to the parent rather than an invalid empty graph.
    Graph out = g;
    out.gt_rationale.reset();
    return out;
  }
  Graph out;
  out.node_count = static_cast<int>(nodes.size());
  out.label = g.label;
  out.graph_id = g.graph_id;
  out.split = g.split;
  for (int e : edge_ids) {
    const auto& [u, v] = g.edges[static_cast<std::size_t>(e)];
    out.edges.push_back(normalized_edge(local[static_cast<std::size_t>(u)], local[static_cast<std::size_t>(v)]));
  }
  std::sort(out.edges.begin(), out.edges.end());
  out.node_features = Tensor(out.node_count, g.feature_dim());
  for (int i = 0; i < out.node_count; ++i)
    for (int j = 0; j < g.feature_dim(); ++j)
      out.node_features.at(i, j) = g.node_features.at(nodes[static_cast<std::size_t>(i)], j);
  validate_graph(out);
  return out;
}
}  // namespace detail

/// Two independent rationale-preserving views: rationale edges kept, each
/// environment edge kept with `keep_prob`. An empty environment degenerates
/// to two copies of the parent (flagged via `degenerate` when provided).
template <class Rng>
std::pair<Graph, Graph> make_positive_pair(const SubgraphSplit& split, double keep_prob, Rng& rng,
                                           bool* degenerate = nullptr) {
  if (degenerate) *degenerate = split.environment_edges.empty();
  auto one = [&]() {
    std::vector<int> edges = split.rationale_edges;
    const std::vector<int> kept = perturb_edges(split.environment_edges, keep_prob, rng);
    edges.insert(edges.end(), kept.begin(), kept.end());
    return detail::subgraph_from_edges(split, edges, /*keep_side=*/1);
  };
  Graph first = one();
  Graph second = one();
  return {std::move(first), std::move(second)};
}

/// Rationale-violating view: environment kept intact, each rationale edge
/// kept with `keep_prob`. An empty rationale degenerates to the parent.
template <class Rng>
Graph make_negative(const SubgraphSplit& split, double keep_prob, Rng& rng, bool* degenerate = nullptr) {
  if (degenerate) *degenerate = split.rationale_edges.empty();
  std::vector<int> edges = split.environment_edges;
  const std::vector<int> kept = perturb_edges(split.rationale_edges, keep_prob, rng);
  edges.insert(edges.end(), kept.begin(), kept.end());
  return detail::subgraph_from_edges(split, edges, /*keep_side=*/0);
}

// ---------------------------------------------------------------------------
// InfoNCE mutual-information estimate between row-aligned embedding batches:
//   I = mean_i [ s_ii - logsumexp_j s_ij ],  s_ij = <a_i, b_j> / tau.
// Always <= 0; equals -log N when every embedding is identical.
// ---------------------------------------------------------------------------

inline ad::Value infonce(ad::Tape& tape, const ad::Value& anchors, const ad::Value& partners,
                         double tau, bool l2_normalize = true) {
  (void)tape;
  require(tau > 0.0, "infonce: tau must be positive");
  require(anchors.rows() == partners.rows() && anchors.cols() == partners.cols(),
          "infonce: embedding batches must have matching shapes");
  require(anchors.rows() >= 2, "infonce: batch must contain at least 2 rows");
  ad::Value a = anchors, b = partners;
  if (l2_normalize) {
    a = ad::l2_normalize_rows(a);
    b = ad::l2_normalize_rows(b);
  }
  ad::Value scores = ad::mul_scalar(ad::matmul(a, ad::transpose(b)), 1.0 / tau);
  return ad::mean(ad::sub(ad::take_diag(scores), ad::lse_rows(scores)));
}

/// L_c = -I(h1+, h2+) + I(h, h-). Anchor embeddings (one (1,H) row per graph)
/// are reused from the caller's ungated encoding pass; positive and negative
/// views are built here from the splits and encoded with unit gates.
template <class Rng>
ad::Value contrastive_loss(ad::Tape& tape, const BoundModel& m,
                           const std::vector<const SubgraphSplit*>& splits,
                           const std::vector<ad::Value>& anchor_embeddings,
                           const ContrastiveConfig& cfg, Rng& rng) {
  cfg.validate();
  require(splits.size() == anchor_embeddings.size(), "contrastive_loss: splits/anchors length mismatch");
  require(splits.size() >= 2, "contrastive_loss: batch must contain at least 2 graphs");
  std::vector<ad::Value> pos1, pos2, negs;
  for (const SubgraphSplit* s : splits) {
    auto [g1, g2] = make_positive_pair(*s, cfg.positive_keep_prob, rng);
    Graph gn = make_negative(*s, cfg.negative_keep_prob, rng);
    pos1.push_back(readout_mean_all(tape, gin_encode(tape, m, g1, unit_edge_weights(tape, g1))));
    pos2.push_back(readout_mean_all(tape, gin_encode(tape, m, g2, unit_edge_weights(tape, g2))));
    negs.push_back(readout_mean_all(tape, gin_encode(tape, m, gn, unit_edge_weights(tape, gn))));
  }
  ad::Value i_pos = infonce(tape, ad::vconcat(pos1), ad::vconcat(pos2), cfg.tau, cfg.l2_normalize);
  ad::Value i_neg = infonce(tape, ad::vconcat(anchor_embeddings), ad::vconcat(negs), cfg.tau, cfg.l2_normalize);
  return ad::add(ad::neg(i_pos), i_neg);
}

}  // namespace grbe
