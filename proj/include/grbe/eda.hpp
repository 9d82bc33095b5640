#pragma once

#include <cmath>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "grbe/graph.hpp"
#include "grbe/prse.hpp"

namespace grbe {

/// Block-diagonal union of two environment subgraphs with mixup'd inclusion
/// probabilities: donor i's environment edges get lambda * (1 - M_i), donor
/// j's get (1 - lambda) * (1 - M_j). No cross-block edges exist by
/// construction; bridges are added only at synthesis time.
struct MixedEnvironmentSpec {
  std::vector<EdgePair> extended_edges;  // local ids over the joint node universe
  std::vector<double> mixed_mask;        // inclusion probability per extended edge
  std::vector<std::uint8_t> block;       // 0 = donor i, 1 = donor j
  std::vector<int> parent_edge_index;    // edge index in the donor's parent graph
  GraphPart nodes;                       // donor i's env nodes, then donor j's
  int block1_node_count = 0;
  double lambda = 0.5;
  long source_i = 0, source_j = 0;
  int source_edges_i = 0, source_edges_j = 0;  // donor parents' total edge counts
};

/// Build the mixed-environment spec from two splits and the donors' full
/// per-edge rationale masks. The environment block of each donor consists of
/// its environment-internal edges (both endpoints environment-side); the
/// environment probability of edge e is 1 - mask[e].
inline MixedEnvironmentSpec mix_environments(const SubgraphSplit& split_i, const SubgraphSplit& split_j,
                                             double lambda, const std::vector<double>& mask_i,
                                             const std::vector<double>& mask_j) {
  require(lambda >= 0.0 && lambda <= 1.0, "mix_environments: lambda outside [0,1]");
  require(static_cast<int>(mask_i.size()) == split_i.parent->edge_count(), "mix_environments: mask_i length mismatch");
  require(static_cast<int>(mask_j.size()) == split_j.parent->edge_count(), "mix_environments: mask_j length mismatch");
  require(split_i.parent->feature_dim() == split_j.parent->feature_dim(),
          "mix_environments: feature dimensions differ");

  const PartitionParts parts_i = split_parts(split_i);
  const PartitionParts parts_j = split_parts(split_j);
  require(!parts_i.environment.edges.empty() && !parts_j.environment.edges.empty(),
          "mix_environments: degenerate mix (empty environment)");

  MixedEnvironmentSpec spec;
  spec.lambda = lambda;
  spec.source_i = split_i.parent->graph_id;
  spec.source_j = split_j.parent->graph_id;
  spec.source_edges_i = split_i.parent->edge_count();
  spec.source_edges_j = split_j.parent->edge_count();
  spec.block1_node_count = parts_i.environment.node_count;

  // Joint node universe: donor i's environment block, then donor j's.
  spec.nodes.node_count = parts_i.environment.node_count + parts_j.environment.node_count;
  spec.nodes.source_nodes = parts_i.environment.source_nodes;
  spec.nodes.source_nodes.insert(spec.nodes.source_nodes.end(), parts_j.environment.source_nodes.begin(),
                                 parts_j.environment.source_nodes.end());
  const int fdim = split_i.parent->feature_dim();
  spec.nodes.node_features = Tensor(spec.nodes.node_count, fdim);
  for (int i = 0; i < parts_i.environment.node_count; ++i)
    for (int k = 0; k < fdim; ++k) spec.nodes.node_features.at(i, k) = parts_i.environment.node_features.at(i, k);
  for (int i = 0; i < parts_j.environment.node_count; ++i)
    for (int k = 0; k < fdim; ++k)
      spec.nodes.node_features.at(spec.block1_node_count + i, k) = parts_j.environment.node_features.at(i, k);

  // Environment-internal edge lists, in donors' edge order. parts.environment
  // holds local edges; recover the parent edge ids to align mask values.
  const auto append_block = [&](const SubgraphSplit& split, const GraphPart& env_part,
                                const std::vector<double>& mask, std::uint8_t block_id, int node_offset,
                                double weight) {
    std::size_t local_edge = 0;
    const std::vector<std::uint8_t> side = node_sides(split);
    for (int e : split.environment_edges) {
      const auto& [u, v] = split.parent->edges[static_cast<std::size_t>(e)];
      if (side[static_cast<std::size_t>(u)] || side[static_cast<std::size_t>(v)]) continue;  // cut edge
      const EdgePair local = env_part.edges[local_edge++];
      spec.extended_edges.push_back({local.first + node_offset, local.second + node_offset});
      spec.mixed_mask.push_back(weight * (1.0 - mask[static_cast<std::size_t>(e)]));
      spec.block.push_back(block_id);
      spec.parent_edge_index.push_back(e);
    }
  };
  append_block(split_i, parts_i.environment, mask_i, 0, 0, lambda);
  append_block(split_j, parts_j.environment, mask_j, 1, spec.block1_node_count, 1.0 - lambda);
  return spec;
}

/// One concrete-relaxed draw over the extended edge set. Probabilities of
/// exactly 0 or 1 (the lambda boundaries) are decided deterministically with
/// no noise; everything else follows the usual relaxation. The hard
/// decision is routed through the random source's threshold_bits so
/// record/replay freezes it.
struct SampledEnvironment {
  std::vector<int> kept;              // indices into extended_edges
  std::vector<double> relaxed;        // gate value per extended edge
  std::vector<double> noise_logit;    // logit(u) per extended edge; NaN where no draw happened
};

template <class Rng>
SampledEnvironment sample_mixed_environment(const MixedEnvironmentSpec& spec, const ConcreteSampleConfig& cfg,
                                            Rng& rng) {
  cfg.validate();
  SampledEnvironment out;
  const std::size_t n = spec.extended_edges.size();
  out.relaxed.resize(n);
  out.noise_logit.assign(n, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t e = 0; e < n; ++e) {
    const double p = spec.mixed_mask[e];
    require(p >= 0.0 && p <= 1.0, "sample_mixed_environment: probability outside [0,1]");
    if (cfg.hard_eval) {
      out.relaxed[e] = p > 0.5 ? 1.0 : 0.0;
    } else if (p <= 0.0) {
      out.relaxed[e] = 0.0;
    } else if (p >= 1.0) {
      out.relaxed[e] = 1.0;
    } else {
      const double u = rng.uniform_open01();
      out.noise_logit[e] = logit_of_noise(u);
      out.relaxed[e] = concrete_relaxed(p, u, cfg.temperature);
    }
  }
  const std::vector<std::uint8_t> bits = rng.threshold_bits(out.relaxed);
  for (std::size_t e = 0; e < n; ++e)
    if (bits[e]) out.kept.push_back(static_cast<int>(e));
  return out;
}

struct AugmentationProvenance {
  long i = 0, j = 0;
  double lambda = 0.5;
  std::vector<EdgePair> bridge_edges;  // merged index space
  int environment_edge_count = 0;
  int rationale_nodes = 0;

  nlohmann::json to_json() const {
    nlohmann::json b = nlohmann::json::array();
    for (const auto& [u, v] : bridge_edges) b.push_back({u, v});
    return nlohmann::json{{"provenance",
                           {{"i", i},
                            {"j", j},
                            {"lambda", lambda},
                            {"bridge_edges", std::move(b)},
                            {"environment_edge_count", environment_edge_count},
                            {"rationale_nodes", rationale_nodes}}}};
  }
};

/// How the augmented graph's edges map back to gate sources; lets the trainer
/// attach differentiable edge weights. Edge order in the merged graph is:
/// rationale edges, kept environment edges, bridges.
struct AugmentedLayout {
  std::vector<int> rationale_parent_edges;  // parent-i edge ids, in merged order
  std::vector<int> kept_extended_edges;     // extended-edge ids, in merged order
  int bridge_count = 0;
};

struct AugmentedGraph {
  Graph graph;
  AugmentationProvenance provenance;
  AugmentedLayout layout;
  SampledEnvironment sampled;  // kept for gate reconstruction
};

/// Assemble one augmented graph: donor i's rationale + a sampled mixed
/// environment + N_add = round(r_add * (|E_i| + |E_j|)) degree-proportional
/// bridges. Returns nullopt when the pair degenerates (five empty samples in
/// a row, or too few distinct cross pairs for N_add bridges).
template <class Rng>
std::optional<AugmentedGraph> synthesize_augmented(const SubgraphSplit& split_i, const MixedEnvironmentSpec& spec,
                                                   const ConcreteSampleConfig& sample_cfg, double r_add, Rng& rng) {
  require(!split_i.rationale_edges.empty(), "synthesize_augmented: empty rationale");
  require(r_add >= 0.0, "synthesize_augmented: r_add must be >= 0");

  SampledEnvironment env;
  bool got = false;
  for (int attempt = 0; attempt < 5; ++attempt) {
    env = sample_mixed_environment(spec, sample_cfg, rng);
    if (!env.kept.empty()) {
      got = true;
      break;
    }
  }
  if (!got) return std::nullopt;

  // Edge-induced environment part over the kept edges (isolated universe
  // nodes drop out here).
  std::vector<int> used;
  {
    std::vector<std::uint8_t> mark(static_cast<std::size_t>(spec.nodes.node_count), 0);
    for (int e : env.kept) {
      mark[static_cast<std::size_t>(spec.extended_edges[static_cast<std::size_t>(e)].first)] = 1;
      mark[static_cast<std::size_t>(spec.extended_edges[static_cast<std::size_t>(e)].second)] = 1;
    }
    for (int v = 0; v < spec.nodes.node_count; ++v)
      if (mark[static_cast<std::size_t>(v)]) used.push_back(v);
  }
  std::vector<int> local(static_cast<std::size_t>(spec.nodes.node_count), -1);
  for (std::size_t k = 0; k < used.size(); ++k) local[static_cast<std::size_t>(used[k])] = static_cast<int>(k);
  GraphPart env_part;
  env_part.node_count = static_cast<int>(used.size());
  env_part.source_nodes = used;
  const int fdim = spec.nodes.node_features.cols;
  env_part.node_features = Tensor(env_part.node_count, fdim);
  for (int i = 0; i < env_part.node_count; ++i)
    for (int k = 0; k < fdim; ++k)
      env_part.node_features.at(i, k) = spec.nodes.node_features.at(used[static_cast<std::size_t>(i)], k);
  for (int e : env.kept) {
    const auto& [u, v] = spec.extended_edges[static_cast<std::size_t>(e)];
    env_part.edges.push_back(normalized_edge(local[static_cast<std::size_t>(u)], local[static_cast<std::size_t>(v)]));
  }

  const PartitionParts parts_i = split_parts(split_i);
  const GraphPart& rat = parts_i.rationale;
  const int nr = rat.node_count, ne = env_part.node_count;

  const long n_add = std::lround(r_add * static_cast<double>(spec.source_edges_i + spec.source_edges_j));
  if (n_add > static_cast<long>(nr) * ne) return std::nullopt;  // cannot place that many distinct bridges

  std::vector<double> deg_r(static_cast<std::size_t>(nr), 0.0), deg_e(static_cast<std::size_t>(ne), 0.0);
  for (const auto& [u, v] : rat.edges) {
    deg_r[static_cast<std::size_t>(u)] += 1.0;
    deg_r[static_cast<std::size_t>(v)] += 1.0;
  }
  for (const auto& [u, v] : env_part.edges) {
    deg_e[static_cast<std::size_t>(u)] += 1.0;
    deg_e[static_cast<std::size_t>(v)] += 1.0;
  }

  std::set<EdgePair> chosen;
  std::vector<EdgePair> bridges;
  for (long k = 0; k < n_add; ++k) {
    bool placed = false;
    for (int tries = 0; tries < 200 && !placed; ++tries) {
      const int a = rng.weighted_choice(deg_r);
      const int b = rng.weighted_choice(deg_e);
      const EdgePair bridge{a, nr + b};
      if (chosen.insert(bridge).second) {
        bridges.push_back(bridge);
        placed = true;
      }
    }
    if (!placed) {  // fall back to the first unused cross pair, deterministically
      for (int a = 0; a < nr && !placed; ++a)
        for (int b = 0; b < ne && !placed; ++b) {
          const EdgePair bridge{a, nr + b};
          if (chosen.insert(bridge).second) {
            bridges.push_back(bridge);
            placed = true;
          }
        }
    }
  }

  AugmentedGraph out;
  out.graph = merge(rat, env_part, bridges, split_i.parent->label);
  out.graph.split = "train";
  out.provenance = AugmentationProvenance{spec.source_i,
                                          spec.source_j,
                                          spec.lambda,
                                          bridges,
                                          static_cast<int>(env.kept.size()),
                                          nr};
  out.layout.rationale_parent_edges = split_i.rationale_edges;
  out.layout.kept_extended_edges = env.kept;
  out.layout.bridge_count = static_cast<int>(bridges.size());
  out.sampled = std::move(env);
  return out;
}

struct PlannedPair {
  int i = 0, j = 0;
  double lambda = 0.5;
};

/// Exactly round(r_aug * n_train) donor pairs; i uniform, j uniform over the
/// rest. Lambda is fixed or drawn Uniform(0.3, 0.7) per pair.
template <class Rng>
std::vector<PlannedPair> plan_augmentation(int n_train, double r_aug, double lambda, bool lambda_uniform, Rng& rng) {
  require(r_aug >= 0.0, "plan_augmentation: r_aug must be >= 0");
  const long count = std::lround(r_aug * static_cast<double>(n_train));
  std::vector<PlannedPair> plan;
  if (count == 0) return plan;
  require(n_train >= 2, "plan_augmentation: need at least 2 training graphs");
  plan.reserve(static_cast<std::size_t>(count));
  for (long k = 0; k < count; ++k) {
    const int i = rng.uniform_int(n_train);
    int j = rng.uniform_int(n_train - 1);
    if (j >= i) ++j;
    const double lam = lambda_uniform ? rng.uniform(0.3, 0.7) : lambda;
    plan.push_back(PlannedPair{i, j, lam});
  }
  return plan;
}

}  // namespace grbe
