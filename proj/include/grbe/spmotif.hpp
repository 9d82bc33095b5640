#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "grbe/corpus_io.hpp"
#include "grbe/graph.hpp"
#include "grbe/rng.hpp"

namespace grbe {

/// Synthetic benchmark: the label is carried by a small motif (cycle, house,
/// crane) attached to a larger label-irrelevant base (tree, ladder, wheel).
/// During training the base kind is spuriously correlated with the label at
/// bias rate b; the test split draws bases uniformly, producing the shift.
struct SpmotifConfig {
  double bias = 0.9;  // P(base matches motif) on train/val
  int n_train = 1500;
  int n_val = 500;
  int n_test = 500;
  std::uint64_t seed = 0;
  int motif_scale = 1;  // stretches the cycle motif; house/crane are fixed shapes
  int base_scale = 1;   // grows the base structures

  void validate() const {
    require(bias >= 1.0 / 3.0 && bias <= 1.0, "SpmotifConfig: bias must lie in [1/3, 1]");
    require(n_train > 0 && n_val > 0 && n_test > 0, "SpmotifConfig: split sizes must be positive");
    require(motif_scale >= 1 && base_scale >= 1, "SpmotifConfig: scale knobs must be >= 1");
  }
};

struct Shape {
  std::string name;
  int node_count = 0;
  std::vector<EdgePair> edges;
};

constexpr int kSpmotifClasses = 3;
constexpr int kSpmotifFeatureDim = 4;
constexpr int kAttachmentEdges = 2;

/// Motif 0: simple cycle of length 4 + scale (5 at default scale).
/// Motif 1: house — triangle roof (apex 0, eaves 1, 2) over a square room.
/// Motif 2: crane — triangle (0,1,2) with legs hanging from nodes 1 and 2.
inline Shape motif_shape(int kind, int scale = 1) {
  require(kind >= 0 && kind < kSpmotifClasses, "motif_shape: kind out of range");
  require(scale >= 1, "motif_shape: scale must be >= 1");
  Shape s;
  switch (kind) {
    case 0: {
      s.name = "cycle";
      s.node_count = 4 + scale;
      for (int i = 0; i < s.node_count; ++i) s.edges.push_back(normalized_edge(i, (i + 1) % s.node_count));
      break;
    }
    case 1:
      s.name = "house";
      s.node_count = 5;
      s.edges = {{0, 1}, {0, 2}, {1, 2}, {1, 3}, {2, 4}, {3, 4}};
      break;
    default:
      s.name = "crane";
      s.node_count = 5;
      s.edges = {{0, 1}, {0, 2}, {1, 2}, {1, 3}, {2, 4}};
      break;
  }
  return s;
}

/// Base 0: complete binary tree, depth 2 + scale (15 nodes at default).
/// Base 1: ladder of length 2 + scale (two rails, 8 nodes at default).
/// Base 2: wheel — hub plus a rim cycle of 5 + scale nodes (hub degree 6 at default).
inline Shape base_shape(int kind, int scale = 1) {
  require(kind >= 0 && kind < kSpmotifClasses, "base_shape: kind out of range");
  require(scale >= 1, "base_shape: scale must be >= 1");
  Shape s;
  switch (kind) {
    case 0: {
      s.name = "tree";
      const int depth = 2 + scale;
      s.node_count = (1 << (depth + 1)) - 1;
      for (int child = 1; child < s.node_count; ++child) s.edges.push_back(normalized_edge(child, (child - 1) / 2));
      break;
    }
    case 1: {
      s.name = "ladder";
      const int len = 2 + scale;  // rail segments
      s.node_count = 2 * (len + 1);
      for (int i = 0; i < len; ++i) {
        s.edges.push_back(normalized_edge(i, i + 1));                          // rail A
        s.edges.push_back(normalized_edge(len + 1 + i, len + 1 + i + 1));      // rail B
      }
      for (int i = 0; i <= len; ++i) s.edges.push_back(normalized_edge(i, len + 1 + i));  // rungs
      break;
    }
    default: {
      s.name = "wheel";
      const int rim = 5 + scale;
      s.node_count = rim + 1;
      for (int i = 1; i <= rim; ++i) s.edges.push_back(normalized_edge(0, i));  // spokes
      for (int i = 1; i <= rim; ++i) s.edges.push_back(normalized_edge(i, i == rim ? 1 : i + 1));
      break;
    }
  }
  return s;
}

/// One generated graph plus the latent kinds behind it (kept for calibration
/// statistics and the corpus metadata sidecar).
struct SpmotifRecord {
  Graph graph;
  int motif_kind = 0;
  int base_kind = 0;
};

/// Pure per-graph generation: everything is derived from (seed, index), so
/// graphs are reproducible in isolation and generation order is irrelevant.
inline SpmotifRecord make_spmotif_graph(const SpmotifConfig& cfg, long index, const std::string& split) {
  cfg.validate();
  RngStream rng = RngStream::keyed(cfg.seed, {stream_key::generate, static_cast<std::uint64_t>(index)});

  const int motif_kind = rng.uniform_int(kSpmotifClasses);
  int base_kind;
  if (split == "test") {
    base_kind = rng.uniform_int(kSpmotifClasses);  // uniform: the spurious link is severed
  } else if (rng.uniform01() < cfg.bias) {
    base_kind = motif_kind;
  } else {
    base_kind = (motif_kind + 1 + rng.uniform_int(kSpmotifClasses - 1)) % kSpmotifClasses;
  }

  const Shape base = base_shape(base_kind, cfg.base_scale);
  const Shape motif = motif_shape(motif_kind, cfg.motif_scale);

  Graph g;
  g.graph_id = index;
  g.split = split;
  g.label = motif_kind;
  g.node_count = base.node_count + motif.node_count;

  // Edge order: base, then motif (shifted past the base block), then the
  // attachment edges. Only the motif edges are ground-truth rationale.
  g.edges = base.edges;
  for (const auto& [u, v] : motif.edges) g.edges.push_back({base.node_count + u, base.node_count + v});
  std::vector<std::uint8_t> gt(g.edges.size(), 0);
  for (std::size_t e = base.edges.size(); e < g.edges.size(); ++e) gt[e] = 1;

  std::vector<EdgePair> attach;
  while (static_cast<int>(attach.size()) < kAttachmentEdges) {
    const EdgePair cand = normalized_edge(rng.uniform_int(base.node_count),
                                          base.node_count + rng.uniform_int(motif.node_count));
    bool dup = false;
    for (const auto& a : attach) dup = dup || a == cand;
    if (!dup) attach.push_back(cand);
  }
  for (const auto& a : attach) {
    g.edges.push_back(a);
    gt.push_back(0);
  }
  g.gt_rationale = std::move(gt);

  g.node_features = Tensor(g.node_count, kSpmotifFeatureDim);
  for (int v = 0; v < g.node_count; ++v)
    for (int k = 0; k < kSpmotifFeatureDim; ++k) g.node_features.at(v, k) = rng.uniform01();

  validate_graph(g);
  return SpmotifRecord{std::move(g), motif_kind, base_kind};
}

struct SpmotifBuild {
  Dataset data;
  std::vector<int> motif_kind;  // per graph, dataset order
  std::vector<int> base_kind;
};

inline SpmotifBuild generate_spmotif_full(const SpmotifConfig& cfg) {
  cfg.validate();
  SpmotifBuild out;
  out.data.feature_dim = kSpmotifFeatureDim;
  out.data.num_classes = kSpmotifClasses;
  const int total = cfg.n_train + cfg.n_val + cfg.n_test;
  out.data.graphs.reserve(static_cast<std::size_t>(total));
  for (long i = 0; i < total; ++i) {
    const std::string split = i < cfg.n_train ? "train" : (i < cfg.n_train + cfg.n_val ? "val" : "test");
    SpmotifRecord rec = make_spmotif_graph(cfg, i, split);
    out.motif_kind.push_back(rec.motif_kind);
    out.base_kind.push_back(rec.base_kind);
    out.data.graphs.push_back(std::move(rec.graph));
  }
  out.data.index_splits();
  return out;
}

inline Dataset generate_spmotif(const SpmotifConfig& cfg) { return generate_spmotif_full(cfg).data; }

/// Config echo plus empirical per-split statistics, written next to the
/// corpus so a run is auditable without regenerating it.
inline nlohmann::json spmotif_metadata(const SpmotifConfig& cfg, const SpmotifBuild& build) {
  nlohmann::json meta;
  meta["config"] = {{"bias", cfg.bias},         {"n_train", cfg.n_train},       {"n_val", cfg.n_val},
                    {"n_test", cfg.n_test},     {"seed", cfg.seed},             {"motif_scale", cfg.motif_scale},
                    {"base_scale", cfg.base_scale}};
  for (const char* split : {"train", "val", "test"}) {
    long n = 0, matched = 0;
    std::vector<long> class_counts(kSpmotifClasses, 0);
    for (std::size_t i = 0; i < build.data.graphs.size(); ++i) {
      if (build.data.graphs[i].split != split) continue;
      ++n;
      ++class_counts[static_cast<std::size_t>(build.motif_kind[i])];
      if (build.motif_kind[i] == build.base_kind[i]) ++matched;
    }
    meta["stats"][split] = {{"graphs", n},
                            {"class_counts", class_counts},
                            {"matched_base_rate", n > 0 ? static_cast<double>(matched) / static_cast<double>(n) : 0.0}};
  }
  return meta;
}

}  // namespace grbe
