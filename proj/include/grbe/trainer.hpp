#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "grbe/adam.hpp"
#include "grbe/corpus_io.hpp"
#include "grbe/eda.hpp"
#include "grbe/metrics.hpp"
#include "grbe/model.hpp"
#include "grbe/prse.hpp"

namespace grbe {

struct TrainConfig {
  double alpha = 0.5;  // augmented-prediction loss weight
  double beta = 0.1;   // contrastive loss weight
  double gamma = 0.5;  // sparsity loss weight
  double r_s = 0.7;    // target fraction of edges kept as rationale
  double r_aug = 0.2;  // augmented graphs per training graph
  double r_add = 0.1;  // bridge edges per donor edge
  double lambda = 0.5;
  bool lambda_uniform = false;  // draw lambda ~ Uniform(0.3, 0.7) per pair
  double temperature = 1.0;
  bool anneal_temperature = false;  // linear schedule down to 0.1 by the last epoch
  double tau = 0.5;
  int hidden = 32;
  int layers = 3;
  int epochs = 50;
  int batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  bool full_graph = false;  // ERM mode: whole-graph prediction, no gating
  bool batch_norm = false;

  void validate() const {
    require(alpha >= 0.0 && beta >= 0.0 && gamma >= 0.0, "TrainConfig: loss coefficients must be >= 0");
    require(r_s >= 0.0 && r_s <= 1.0, "TrainConfig: r_s outside [0,1]");
    require(r_aug >= 0.0 && r_aug <= 1.0, "TrainConfig: r_aug outside [0,1]");
    require(r_add >= 0.0 && r_add <= 1.0, "TrainConfig: r_add outside [0,1]");
    require(lambda >= 0.0 && lambda <= 1.0, "TrainConfig: lambda outside [0,1]");
    require(temperature > 0.0, "TrainConfig: temperature must be positive");
    require(tau > 0.0, "TrainConfig: tau must be positive");
    require(hidden >= 1 && layers >= 1, "TrainConfig: hidden and layers must be >= 1");
    require(epochs >= 1 && batch_size >= 1, "TrainConfig: epochs and batch_size must be >= 1");
    require(learning_rate > 0.0, "TrainConfig: learning_rate must be positive");
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"alpha", alpha},
                          {"beta", beta},
                          {"gamma", gamma},
                          {"r_s", r_s},
                          {"r_aug", r_aug},
                          {"r_add", r_add},
                          {"lambda", lambda},
                          {"lambda_uniform", lambda_uniform},
                          {"temperature", temperature},
                          {"anneal_temperature", anneal_temperature},
                          {"tau", tau},
                          {"hidden", hidden},
                          {"layers", layers},
                          {"epochs", epochs},
                          {"batch_size", batch_size},
                          {"learning_rate", learning_rate},
                          {"seed", seed},
                          {"full_graph", full_graph},
                          {"batch_norm", batch_norm}};
  }
};

struct LossBundle {
  double l_r = 0.0, l_a = 0.0, l_c = 0.0, l_s = 0.0, total = 0.0;
};

struct BatchLoss {
  ad::Value total;  // scalar on the caller's tape
  LossBundle bundle;
};

namespace detail {

/// True when the split has at least one environment-internal edge (both
/// endpoints environment-side) — the raw material environment mixing needs.
inline bool has_internal_environment(const SubgraphSplit& s) {
  const std::vector<std::uint8_t> side = node_sides(s);
  for (int e : s.environment_edges) {
    const auto& [u, v] = s.parent->edges[static_cast<std::size_t>(e)];
    if (!side[static_cast<std::size_t>(u)] && !side[static_cast<std::size_t>(v)]) return true;
  }
  return false;
}

inline ad::Value mean_of(ad::Tape& tape, const std::vector<ad::Value>& terms) {
  if (terms.empty()) return tape.constant(0.0);
  if (terms.size() == 1) return terms.front();
  return ad::mean(ad::vconcat(terms));
}

}  // namespace detail

/// Differentiable edge weights for one augmented graph, aligned with its
/// merged edge order (rationale, kept environment, bridges). Rationale edges
/// reuse the donor's relaxed gates; environment edges rebuild the mixed-mask
/// relaxation on the tape from the donors' mask heads and the recorded noise,
/// so gradients reach both donors; bridges are constant 1.
inline ad::Value augmented_edge_weights(ad::Tape& tape, const AugmentedGraph& aug, const MixedEnvironmentSpec& spec,
                                        const ad::Value& gates_i, const ad::Value& mask_i, const ad::Value& mask_j,
                                        double temperature) {
  std::vector<ad::Value> parts;
  if (!aug.layout.rationale_parent_edges.empty())
    parts.push_back(ad::gather_rows(gates_i, aug.layout.rationale_parent_edges));
  for (int ke : aug.layout.kept_extended_edges) {
    const double lu = aug.sampled.noise_logit[static_cast<std::size_t>(ke)];
    if (std::isnan(lu)) {  // kept deterministically (probability saturated at 1)
      parts.push_back(tape.constant(Tensor::full(1, 1, 1.0)));
      continue;
    }
    const bool from_i = spec.block[static_cast<std::size_t>(ke)] == 0;
    const ad::Value& donor_mask = from_i ? mask_i : mask_j;
    const double weight = from_i ? spec.lambda : 1.0 - spec.lambda;
    const int parent_e = spec.parent_edge_index[static_cast<std::size_t>(ke)];
    ad::Value m = ad::gather_rows(donor_mask, {parent_e});
    ad::Value p = ad::mul_scalar(ad::sub(tape.constant(Tensor::full(1, 1, 1.0)), m), weight);
    parts.push_back(concrete_relax_tape(tape, p, {lu}, temperature));
  }
  if (aug.layout.bridge_count > 0)
    parts.push_back(tape.constant(Tensor::full(aug.layout.bridge_count, 1, 1.0)));
  ad::Value w = ad::vconcat(parts);
  require(w.rows() == aug.graph.edge_count(), "augmented_edge_weights: edge order misalignment");
  return w;
}

/// One batch of the full objective: total = L_r + alpha L_a + beta L_c
/// + gamma L_s, built on the caller's tape (the additivity is exact).
/// All structural randomness flows through `rng`, so a record/replay wrapper
/// freezes every discrete decision for gradient checking.
template <class Rng>
BatchLoss compute_losses(ad::Tape& tape, const BoundModel& model, const std::vector<const Graph*>& batch,
                         const TrainConfig& cfg, double temperature, Rng& rng) {
  cfg.validate();
  require(batch.size() >= 2, "compute_losses: batch must contain at least 2 graphs");
  const int n = static_cast<int>(batch.size());

  std::vector<ad::Value> ce_terms, sparsity_terms, anchors, masks, gates;
  std::vector<SubgraphSplit> splits;
  splits.reserve(static_cast<std::size_t>(n));

  for (const Graph* g : batch) {
    ad::Value h0 = gin_encode(tape, model, *g, unit_edge_weights(tape, *g));
    if (cfg.full_graph) {
      ce_terms.push_back(cross_entropy(tape, classify(tape, model, readout_mean_all(tape, h0)), g->label));
      continue;
    }
    anchors.push_back(readout_mean_all(tape, h0));
    ad::Value m = mask_head(tape, model, h0, *g);
    std::vector<double> logit_noise(static_cast<std::size_t>(g->edge_count()));
    for (double& lu : logit_noise) lu = logit_of_noise(rng.uniform_open01());
    ad::Value b = concrete_relax_tape(tape, m, logit_noise, temperature);
    const std::vector<double>& relaxed = b.data().v;
    splits.push_back(partition(*g, rng.threshold_bits(relaxed), relaxed));

    ad::Value h1 = gin_encode(tape, model, *g, b);
    const std::vector<int> nodes = rationale_nodes(splits.back());
    ad::Value emb = nodes.empty() ? readout_mean_all(tape, h1) : readout_mean(tape, h1, nodes);
    ce_terms.push_back(cross_entropy(tape, classify(tape, model, emb), g->label));
    sparsity_terms.push_back(sparsity_loss(tape, m, cfg.r_s));
    masks.push_back(m);
    gates.push_back(b);
  }

  ad::Value l_r = detail::mean_of(tape, ce_terms);
  ad::Value l_s = detail::mean_of(tape, sparsity_terms);

  ad::Value l_c = tape.constant(0.0);
  if (!cfg.full_graph && cfg.beta != 0.0) {
    ContrastiveConfig ccfg;
    ccfg.tau = cfg.tau;
    std::vector<const SubgraphSplit*> split_ptrs;
    for (const SubgraphSplit& s : splits) split_ptrs.push_back(&s);
    l_c = contrastive_loss(tape, model, split_ptrs, anchors, ccfg, rng);
  }

  ad::Value l_a = tape.constant(0.0);
  if (!cfg.full_graph && cfg.alpha != 0.0 && cfg.r_aug > 0.0) {
    const std::vector<PlannedPair> plan = plan_augmentation(n, cfg.r_aug, cfg.lambda, cfg.lambda_uniform, rng);
    ConcreteSampleConfig scfg;
    scfg.temperature = temperature;
    std::vector<ad::Value> aug_terms;
    for (const PlannedPair& pp : plan) {
      const SubgraphSplit& si = splits[static_cast<std::size_t>(pp.i)];
      const SubgraphSplit& sj = splits[static_cast<std::size_t>(pp.j)];
      if (si.rationale_edges.empty()) continue;
      if (!detail::has_internal_environment(si) || !detail::has_internal_environment(sj)) continue;
      const MixedEnvironmentSpec spec =
          mix_environments(si, sj, pp.lambda, masks[static_cast<std::size_t>(pp.i)].data().v,
                           masks[static_cast<std::size_t>(pp.j)].data().v);
      const std::optional<AugmentedGraph> aug = synthesize_augmented(si, spec, scfg, cfg.r_add, rng);
      if (!aug) continue;
      ad::Value w = augmented_edge_weights(tape, *aug, spec, gates[static_cast<std::size_t>(pp.i)],
                                           masks[static_cast<std::size_t>(pp.i)],
                                           masks[static_cast<std::size_t>(pp.j)], temperature);
      ad::Value h = gin_encode(tape, model, aug->graph, w);
      aug_terms.push_back(cross_entropy(tape, classify(tape, model, readout_mean_all(tape, h)), aug->graph.label));
    }
    l_a = detail::mean_of(tape, aug_terms);
  }

  ad::Value total = ad::add(ad::add(ad::add(l_r, ad::mul_scalar(l_a, cfg.alpha)), ad::mul_scalar(l_c, cfg.beta)),
                            ad::mul_scalar(l_s, cfg.gamma));
  BatchLoss out{total, LossBundle{l_r.scalar(), l_a.scalar(), l_c.scalar(), l_s.scalar(), total.scalar()}};
  return out;
}

// ---------------------------------------------------------------------------
// Inference and evaluation (deterministic; hard 0/1 gates).
// ---------------------------------------------------------------------------

struct Inference {
  int predicted = -1;
  std::vector<double> mask;  // per-edge gate probability; empty in full-graph mode
  std::vector<std::uint8_t> hard;
  bool fallback = false;  // empty rationale -> whole-graph prediction
};

inline Inference infer(const ModelConfig& mcfg, const ParamStore& params, const Graph& g, bool full_graph = false) {
  ad::Tape tape;
  const BoundModel model = bind_model(tape, mcfg, params);
  ad::Value h0 = gin_encode(tape, model, g, unit_edge_weights(tape, g));
  Inference out;
  if (full_graph) {
    out.predicted = argmax_row(classify(tape, model, readout_mean_all(tape, h0)).data());
    return out;
  }
  out.mask = mask_head(tape, model, h0, g).data().v;
  RngStream unused(0);  // hard_eval consumes no randomness
  ConcreteSampleConfig scfg;
  scfg.hard_eval = true;
  const SubgraphSplit split = sample_rationale(g, out.mask, scfg, unused);
  out.hard = split.hard_indicator;
  const std::vector<int> nodes = rationale_nodes(split);
  if (nodes.empty()) {
    out.fallback = true;
    out.predicted = argmax_row(classify(tape, model, readout_mean_all(tape, h0)).data());
    return out;
  }
  ad::Value h1 = gin_encode(tape, model, g, tape.constant(Tensor::column(split.relaxed_indicator)));
  out.predicted = argmax_row(classify(tape, model, readout_mean(tape, h1, nodes)).data());
  return out;
}

struct EvalOutcome {
  double acc = 0.0;
  std::optional<double> auc;  // absent without ground-truth rationales (or in full-graph mode)
  std::vector<int> predictions;
  long fallback_count = 0;
};

inline EvalOutcome evaluate(const ModelConfig& mcfg, const ParamStore& params, const Dataset& data,
                            const std::vector<int>& indices, bool full_graph = false) {
  require(!indices.empty(), "evaluate: empty index list");
  EvalOutcome out;
  std::vector<int> labels;
  std::vector<std::vector<double>> scores;
  std::vector<std::vector<std::uint8_t>> flags;
  for (int idx : indices) {
    const Graph& g = data.graphs[static_cast<std::size_t>(idx)];
    const Inference inf = infer(mcfg, params, g, full_graph);
    out.predictions.push_back(inf.predicted);
    labels.push_back(g.label);
    if (inf.fallback) ++out.fallback_count;
    if (!full_graph && g.gt_rationale.has_value()) {
      scores.push_back(inf.mask);
      flags.push_back(*g.gt_rationale);
    }
  }
  out.acc = accuracy(out.predictions, labels);
  bool has_pos = false, has_neg = false;
  for (const auto& f : flags)
    for (std::uint8_t x : f) (x ? has_pos : has_neg) = true;
  if (has_pos && has_neg) out.auc = rationale_auc(scores, flags);
  return out;
}

// ---------------------------------------------------------------------------
// Offline augmented-corpus synthesis (shared by the augment command and the
// per-epoch dump hook). Masks and splits come from the eval-hard view of the
// current parameters; sampling and pairing are driven by one keyed stream.
// ---------------------------------------------------------------------------

struct AugmentOptions {
  double r_aug = 0.2;
  double r_add = 0.1;
  double lambda = 0.5;
  bool lambda_uniform = false;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  std::uint64_t salt = 0;  // extra key (e.g. epoch number) separating dump streams
};

struct AugmentedCorpus {
  std::vector<AugmentedGraph> graphs;
  long planned = 0;
  long skipped = 0;  // degenerate pairs (no usable environment or rationale)
};

inline AugmentedCorpus make_augmented_corpus(const ModelConfig& mcfg, const ParamStore& params, const Dataset& data,
                                             const AugmentOptions& opt) {
  require(!data.train_idx.empty(), "make_augmented_corpus: dataset has no train split");

  // Eval-view masks and hard splits for every training graph, computed once.
  std::vector<std::vector<double>> mask_vals;
  std::vector<SubgraphSplit> splits;
  std::vector<const Graph*> donors;
  splits.reserve(data.train_idx.size());
  RngStream unused(0);
  for (int idx : data.train_idx) {
    const Graph& g = data.graphs[static_cast<std::size_t>(idx)];
    ad::Tape tape;
    const BoundModel model = bind_model(tape, mcfg, params);
    ad::Value h0 = gin_encode(tape, model, g, unit_edge_weights(tape, g));
    mask_vals.push_back(mask_head(tape, model, h0, g).data().v);
    ConcreteSampleConfig hard_cfg;
    hard_cfg.hard_eval = true;
    splits.push_back(sample_rationale(g, mask_vals.back(), hard_cfg, unused));
    donors.push_back(&g);
  }

  RngStream rng = RngStream::keyed(opt.seed, {stream_key::augment, opt.salt});
  const std::vector<PlannedPair> plan =
      plan_augmentation(static_cast<int>(donors.size()), opt.r_aug, opt.lambda, opt.lambda_uniform, rng);
  ConcreteSampleConfig scfg;
  scfg.temperature = opt.temperature;

  AugmentedCorpus out;
  out.planned = static_cast<long>(plan.size());
  long next_id = 0;
  for (const Graph* g : donors) next_id = std::max(next_id, g->graph_id + 1);
  for (const PlannedPair& pp : plan) {
    const SubgraphSplit& si = splits[static_cast<std::size_t>(pp.i)];
    const SubgraphSplit& sj = splits[static_cast<std::size_t>(pp.j)];
    if (si.rationale_edges.empty() || !detail::has_internal_environment(si) ||
        !detail::has_internal_environment(sj)) {
      ++out.skipped;
      continue;
    }
    const MixedEnvironmentSpec spec = mix_environments(si, sj, pp.lambda, mask_vals[static_cast<std::size_t>(pp.i)],
                                                       mask_vals[static_cast<std::size_t>(pp.j)]);
    std::optional<AugmentedGraph> aug = synthesize_augmented(si, spec, scfg, opt.r_add, rng);
    if (!aug) {
      ++out.skipped;
      continue;
    }
    aug->graph.graph_id = next_id++;
    out.graphs.push_back(std::move(*aug));
  }
  return out;
}

/// Mean-pooled encoder view of a graph's environment block (node ids given by
/// the caller: merged-order suffix for augmented graphs, environment-side
/// nodes for plain ones).
inline std::vector<double> environment_representation(const ModelConfig& mcfg, const ParamStore& params,
                                                      const Graph& g, const std::vector<int>& env_nodes) {
  require(!env_nodes.empty(), "environment_representation: empty environment");
  ad::Tape tape;
  const BoundModel model = bind_model(tape, mcfg, params);
  ad::Value h0 = gin_encode(tape, model, g, unit_edge_weights(tape, g));
  return readout_mean(tape, h0, env_nodes).data().v;
}

// ---------------------------------------------------------------------------
// Training loop.
// ---------------------------------------------------------------------------

struct EpochStats {
  int epoch = 0;
  LossBundle losses;  // means over the epoch's batches, weighted by batch size
  double train_acc = 0.0;
  double val_acc = 0.0;
  std::optional<double> rationale_auc;  // on the validation split
};

struct TrainResult {
  ModelConfig model_cfg;
  ParamStore params;
  std::vector<EpochStats> history;
};

inline double effective_temperature(const TrainConfig& cfg, int epoch) {
  if (!cfg.anneal_temperature || cfg.epochs <= 1) return cfg.temperature;
  const double frac = static_cast<double>(epoch) / static_cast<double>(cfg.epochs - 1);
  return cfg.temperature + (0.1 - cfg.temperature) * frac;
}

/// Hook invoked after every epoch with the live parameters (used for the
/// per-epoch augmented-corpus dumps); may be empty.
using EpochHook = std::function<void(int epoch, const ModelConfig&, const ParamStore&)>;

inline TrainResult train(const Dataset& data, const TrainConfig& cfg, std::ostream* log = nullptr,
                         const EpochHook& after_epoch = nullptr) {
  cfg.validate();
  require(data.train_idx.size() >= 2, "train: need at least 2 training graphs");
  require(data.num_classes >= 2, "train: need at least 2 classes");

  ModelConfig mcfg;
  mcfg.feature_dim = data.feature_dim;
  mcfg.hidden = cfg.hidden;
  mcfg.layers = cfg.layers;
  mcfg.classes = data.num_classes;
  mcfg.batch_norm = cfg.batch_norm;
  mcfg.validate();

  TrainResult result;
  result.model_cfg = mcfg;
  result.params = init_model_params(mcfg, cfg.seed);
  AdamState adam;
  AdamConfig acfg;
  acfg.learning_rate = cfg.learning_rate;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double temperature = effective_temperature(cfg, epoch);
    std::vector<int> order = data.train_idx;
    RngStream shuffle_rng = RngStream::keyed(cfg.seed, {stream_key::shuffle, static_cast<std::uint64_t>(epoch)});
    shuffle_rng.shuffle(order);

    // Chunk into batches; a trailing singleton joins the previous batch so
    // every batch has the >= 2 graphs the contrastive term needs.
    std::vector<std::vector<int>> batches;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size))
      batches.emplace_back(order.begin() + static_cast<long>(at),
                           order.begin() + static_cast<long>(std::min(at + static_cast<std::size_t>(cfg.batch_size),
                                                                      order.size())));
    if (batches.size() >= 2 && batches.back().size() == 1) {
      batches[batches.size() - 2].push_back(batches.back().front());
      batches.pop_back();
    }

    LossBundle epoch_mean;
    long seen = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      std::vector<const Graph*> batch;
      for (int idx : batches[b]) batch.push_back(&data.graphs[static_cast<std::size_t>(idx)]);
      RngStream rng = RngStream::keyed(
          cfg.seed, {stream_key::batch, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(b)});
      try {
        ad::Tape tape;
        const BoundModel model = bind_model(tape, mcfg, result.params);
        const BatchLoss loss = compute_losses(tape, model, batch, cfg, temperature, rng);
        tape.backward(loss.total);
        const GradStore grads = collect_grads(tape, model.values);
        adam_step(result.params, grads, adam, acfg);
        const double w = static_cast<double>(batch.size());
        epoch_mean.l_r += loss.bundle.l_r * w;
        epoch_mean.l_a += loss.bundle.l_a * w;
        epoch_mean.l_c += loss.bundle.l_c * w;
        epoch_mean.l_s += loss.bundle.l_s * w;
        epoch_mean.total += loss.bundle.total * w;
        seen += batch.size();
      } catch (const std::invalid_argument& err) {
        throw DivergenceError("epoch " + std::to_string(epoch) + " batch " + std::to_string(b) + ": " + err.what());
      }
    }
    epoch_mean.l_r /= static_cast<double>(seen);
    epoch_mean.l_a /= static_cast<double>(seen);
    epoch_mean.l_c /= static_cast<double>(seen);
    epoch_mean.l_s /= static_cast<double>(seen);
    epoch_mean.total /= static_cast<double>(seen);

    EpochStats stats;
    stats.epoch = epoch;
    stats.losses = epoch_mean;
    stats.train_acc = evaluate(mcfg, result.params, data, data.train_idx, cfg.full_graph).acc;
    if (!data.val_idx.empty()) {
      const EvalOutcome val = evaluate(mcfg, result.params, data, data.val_idx, cfg.full_graph);
      stats.val_acc = val.acc;
      stats.rationale_auc = val.auc;
    }
    result.history.push_back(stats);
    if (log) {
      char line[256];
      std::snprintf(line, sizeof(line), "epoch %3d  total %.4f  l_r %.4f  l_a %.4f  l_c %.4f  l_s %.4f  train %.3f  val %.3f",
                    epoch, epoch_mean.total, epoch_mean.l_r, epoch_mean.l_a, epoch_mean.l_c, epoch_mean.l_s,
                    stats.train_acc, stats.val_acc);
      (*log) << line << '\n';
    }
    if (after_epoch) after_epoch(epoch, mcfg, result.params);
  }
  return result;
}

// ---------------------------------------------------------------------------
// History CSV (shortest-exact doubles so reruns are byte-identical).
// ---------------------------------------------------------------------------

namespace detail {
inline std::string num17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}
}  // namespace detail

inline void write_history_csv(const std::string& path, const std::vector<EpochStats>& history) {
  AtomicFileWriter w(path);
  w.stream() << "epoch,l_r,l_a,l_c,l_s,total,train_acc,val_acc,rationale_auc\n";
  for (const EpochStats& s : history) {
    w.stream() << s.epoch << ',' << detail::num17(s.losses.l_r) << ',' << detail::num17(s.losses.l_a) << ','
               << detail::num17(s.losses.l_c) << ',' << detail::num17(s.losses.l_s) << ','
               << detail::num17(s.losses.total) << ',' << detail::num17(s.train_acc) << ','
               << detail::num17(s.val_acc) << ',' << (s.rationale_auc ? detail::num17(*s.rationale_auc) : "") << '\n';
  }
  w.commit();
}

}  // namespace grbe
