#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "grbe/tensor.hpp"

namespace grbe {

using EdgePair = std::pair<int, int>;

/// Undirected attributed graph. Edges are stored once with u < v; self-loops
/// and duplicates are invalid. Node features are one row per node.
struct Graph {
  int node_count = 0;
  std::vector<EdgePair> edges;
  Tensor node_features;  // (node_count, feature_dim)
  int label = 0;
  std::optional<std::vector<std::uint8_t>> gt_rationale;  // per-edge flags
  long graph_id = 0;
  std::string split;  // "train" | "val" | "test" | ""

  int edge_count() const { return static_cast<int>(edges.size()); }
  int feature_dim() const { return node_features.cols; }
};

inline void validate_graph(const Graph& g) {
  require(g.node_count >= 1, "graph: node_count must be >= 1");
  require(g.node_features.rows == g.node_count, "graph: feature rows != node_count");
  std::set<EdgePair> seen;
  for (const auto& [u, v] : g.edges) {
    require(u >= 0 && u < g.node_count && v >= 0 && v < g.node_count, "graph: edge endpoint out of range");
    require(u != v, "graph: self-loop");
    require(u < v, "graph: edge not stored as (u < v)");
    require(seen.insert({u, v}).second, "graph: duplicate edge");
  }
  if (g.gt_rationale) require(g.gt_rationale->size() == g.edges.size(), "graph: gt_rationale length != edge_count");
}

inline EdgePair normalized_edge(int u, int v) { return u < v ? EdgePair{u, v} : EdgePair{v, u}; }

inline std::vector<EdgePair> canonical_edges(const Graph& g) {
  std::vector<EdgePair> es = g.edges;
  std::sort(es.begin(), es.end());
  return es;
}

/// Per-edge two-way split of a parent graph. `hard_indicator[e] = 1` puts edge
/// e in the rationale; everything else is environment. Relaxed values are the
/// matching soft gates in [0, 1].
struct SubgraphSplit {
  const Graph* parent = nullptr;
  std::vector<std::uint8_t> hard_indicator;
  std::vector<double> relaxed_indicator;
  std::vector<int> rationale_edges;    // indices into parent->edges
  std::vector<int> environment_edges;  // complement, in order
};

inline SubgraphSplit partition(const Graph& g, std::vector<std::uint8_t> hard, std::vector<double> relaxed) {
  require(hard.size() == g.edges.size(), "partition: indicator length != edge_count");
  require(relaxed.size() == g.edges.size(), "partition: relaxed length != edge_count");
  for (double r : relaxed) require(r >= 0.0 && r <= 1.0, "partition: relaxed value outside [0,1]");
  SubgraphSplit s;
  s.parent = &g;
  s.hard_indicator = std::move(hard);
  s.relaxed_indicator = std::move(relaxed);
  for (int e = 0; e < g.edge_count(); ++e) {
    if (s.hard_indicator[static_cast<std::size_t>(e)])
      s.rationale_edges.push_back(e);
    else
      s.environment_edges.push_back(e);
  }
  return s;
}

/// Node sides: a node is rationale-side iff it has at least one incident
/// rationale edge; isolated nodes land on the environment side.
inline std::vector<std::uint8_t> node_sides(const SubgraphSplit& s) {
  std::vector<std::uint8_t> side(static_cast<std::size_t>(s.parent->node_count), 0);
  for (int e : s.rationale_edges) {
    side[static_cast<std::size_t>(s.parent->edges[static_cast<std::size_t>(e)].first)] = 1;
    side[static_cast<std::size_t>(s.parent->edges[static_cast<std::size_t>(e)].second)] = 1;
  }
  return side;
}

/// Node set of the rationale side as a sorted list.
inline std::vector<int> rationale_nodes(const SubgraphSplit& s) {
  std::vector<std::uint8_t> side = node_sides(s);
  std::vector<int> nodes;
  for (int v = 0; v < s.parent->node_count; ++v)
    if (side[static_cast<std::size_t>(v)]) nodes.push_back(v);
  return nodes;
}

/// A reindexed piece of some source graph: edges over local ids, features
/// carried over, and the local -> source node mapping kept for provenance.
struct GraphPart {
  int node_count = 0;
  std::vector<EdgePair> edges;   // local ids, u < v
  Tensor node_features;          // (node_count, feature_dim)
  std::vector<int> source_nodes; // local id -> source graph node id
};

namespace detail {
inline GraphPart build_part(const Graph& g, const std::vector<int>& nodes, const std::vector<EdgePair>& edges) {
  GraphPart p;
  p.node_count = static_cast<int>(nodes.size());
  p.source_nodes = nodes;
  std::vector<int> local(static_cast<std::size_t>(g.node_count), -1);
  for (int i = 0; i < p.node_count; ++i) local[static_cast<std::size_t>(nodes[static_cast<std::size_t>(i)])] = i;
  p.edges.reserve(edges.size());
  for (const auto& [u, v] : edges)
    p.edges.push_back(normalized_edge(local[static_cast<std::size_t>(u)], local[static_cast<std::size_t>(v)]));
  p.node_features = Tensor(p.node_count, g.feature_dim());
  for (int i = 0; i < p.node_count; ++i)
    for (int j = 0; j < g.feature_dim(); ++j)
      p.node_features.at(i, j) = g.node_features.at(nodes[static_cast<std::size_t>(i)], j);
  return p;
}
}  // namespace detail

/// Both sides of a split plus the cut set, ready for merge():
///  - rationale: rationale-side nodes with the rationale edges;
///  - environment: ALL environment-side nodes (isolated ones included) with
///    the environment-internal edges (both endpoints environment-side);
///  - cut_bridges: the remaining environment edges (at least one rationale-side
///    endpoint), expressed in the merged index space (rationale block first).
/// merge(rationale, environment, cut_bridges) reconstructs the parent.
struct PartitionParts {
  GraphPart rationale;
  GraphPart environment;
  std::vector<EdgePair> cut_bridges;
};

inline PartitionParts split_parts(const SubgraphSplit& s) {
  const Graph& g = *s.parent;
  const std::vector<std::uint8_t> side = node_sides(s);
  std::vector<int> r_nodes, e_nodes;
  for (int v = 0; v < g.node_count; ++v) (side[static_cast<std::size_t>(v)] ? r_nodes : e_nodes).push_back(v);

  std::vector<EdgePair> r_edges, e_edges;
  std::vector<int> cut;  // parent edge indices
  for (int e : s.rationale_edges) r_edges.push_back(g.edges[static_cast<std::size_t>(e)]);
  for (int e : s.environment_edges) {
    const auto& [u, v] = g.edges[static_cast<std::size_t>(e)];
    if (!side[static_cast<std::size_t>(u)] && !side[static_cast<std::size_t>(v)])
      e_edges.push_back({u, v});
    else
      cut.push_back(e);
  }

  PartitionParts parts;
  parts.rationale = detail::build_part(g, r_nodes, r_edges);
  parts.environment = detail::build_part(g, e_nodes, e_edges);

  // Merged index space: rationale block [0, nr), environment block [nr, nr+ne).
  std::vector<int> merged(static_cast<std::size_t>(g.node_count), -1);
  for (int i = 0; i < parts.rationale.node_count; ++i)
    merged[static_cast<std::size_t>(parts.rationale.source_nodes[static_cast<std::size_t>(i)])] = i;
  for (int i = 0; i < parts.environment.node_count; ++i)
    merged[static_cast<std::size_t>(parts.environment.source_nodes[static_cast<std::size_t>(i)])] =
        parts.rationale.node_count + i;
  for (int e : cut) {
    const auto& [u, v] = g.edges[static_cast<std::size_t>(e)];
    parts.cut_bridges.push_back(normalized_edge(merged[static_cast<std::size_t>(u)], merged[static_cast<std::size_t>(v)]));
  }
  return parts;
}

/// Glue a rationale part and an environment part into one graph. The result
/// indexes the rationale block first, then the environment block; bridges are
/// node pairs in that merged space. Edge order: rationale, environment,
/// bridges. Features are carried from the parts; the label is inherited by
/// the caller's choice (augmentation passes the rationale donor's label).
inline Graph merge(const GraphPart& rationale, const GraphPart& environment,
                   std::span<const EdgePair> bridges, int label, long graph_id = 0) {
  require(rationale.node_count > 0, "merge: empty rationale side");
  require(rationale.node_features.cols == environment.node_features.cols || environment.node_count == 0,
          "merge: feature dimensions differ");
  Graph g;
  g.node_count = rationale.node_count + environment.node_count;
  g.label = label;
  g.graph_id = graph_id;
  const int offset = rationale.node_count;
  g.edges = rationale.edges;
  for (const auto& [u, v] : environment.edges) g.edges.push_back({u + offset, v + offset});
  std::set<EdgePair> seen(g.edges.begin(), g.edges.end());
  for (const auto& [u, v] : bridges) {
    require(u >= 0 && u < g.node_count && v >= 0 && v < g.node_count, "merge: bridge endpoint out of range");
    require(u != v, "merge: bridge is a self-loop");
    const EdgePair e = normalized_edge(u, v);
    require(seen.insert(e).second, "merge: duplicate bridge edge");
    g.edges.push_back(e);
  }
  const int fdim = rationale.node_features.cols;
  g.node_features = Tensor(g.node_count, fdim);
  for (int i = 0; i < rationale.node_count; ++i)
    for (int j = 0; j < fdim; ++j) g.node_features.at(i, j) = rationale.node_features.at(i, j);
  for (int i = 0; i < environment.node_count; ++i)
    for (int j = 0; j < fdim; ++j) g.node_features.at(offset + i, j) = environment.node_features.at(i, j);
  validate_graph(g);
  return g;
}

/// Independent Bernoulli(keep_probability) thinning of an edge index set.
/// Pure edge selection; callers drop nodes their contract says to drop.
template <class Rng>
std::vector<int> perturb_edges(const std::vector<int>& edge_set, double keep_probability, Rng& rng) {
  require(keep_probability >= 0.0 && keep_probability <= 1.0, "perturb_edges: keep probability outside [0,1]");
  std::vector<int> kept;
  kept.reserve(edge_set.size());
  for (int e : edge_set)
    if (rng.bernoulli(keep_probability)) kept.push_back(e);
  return kept;
}

}  // namespace grbe
