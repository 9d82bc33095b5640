#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "grbe/autodiff.hpp"
#include "grbe/corpus_io.hpp"
#include "grbe/graph.hpp"
#include "grbe/params.hpp"
#include "grbe/rng.hpp"

namespace grbe {

struct ModelConfig {
  int feature_dim = 4;
  int hidden = 32;
  int layers = 3;
  int classes = 3;
  bool batch_norm = false;  // optional column norm inside each layer MLP

  void validate() const {
    require(feature_dim >= 1, "model: feature_dim must be >= 1");
    require(hidden >= 1, "model: hidden must be >= 1");
    require(layers >= 1, "model: layers must be >= 1");
    require(classes >= 2, "model: classes must be >= 2");
  }
};

// Parameter naming:
//   enc.l<k>.{w1,b1,w2,b2}   GIN layer k's two-linear MLP (+ .bn_gamma/.bn_beta)
//   gate.{w1,b1,w2,b2}       per-edge gate head on [h_u | h_v]
//   cls.{w1,b1,w2,b2}        graph-level classifier head
// GIN self-loop coefficient eps is fixed at 0.

namespace detail {
inline Tensor glorot(int rows, int cols, RngStream& rng) {
  Tensor t(rows, cols);
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  for (double& x : t.v) x = rng.uniform(-limit, limit);
  return t;
}
inline std::string layer_prefix(int k) { return "enc.l" + std::to_string(k) + "."; }
}  // namespace detail

inline ParamStore init_model_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  RngStream rng = RngStream::keyed(seed, {stream_key::init});
  ParamStore p;
  for (int k = 0; k < cfg.layers; ++k) {
    const int in = k == 0 ? cfg.feature_dim : cfg.hidden;
    const std::string pre = detail::layer_prefix(k);
    p.emplace(pre + "w1", detail::glorot(in, cfg.hidden, rng));
    p.emplace(pre + "b1", Tensor(1, cfg.hidden));
    p.emplace(pre + "w2", detail::glorot(cfg.hidden, cfg.hidden, rng));
    p.emplace(pre + "b2", Tensor(1, cfg.hidden));
    if (cfg.batch_norm) {
      p.emplace(pre + "bn_gamma", Tensor::full(1, cfg.hidden, 1.0));
      p.emplace(pre + "bn_beta", Tensor(1, cfg.hidden));
    }
  }
  p.emplace("gate.w1", detail::glorot(2 * cfg.hidden, cfg.hidden, rng));
  p.emplace("gate.b1", Tensor(1, cfg.hidden));
  p.emplace("gate.w2", detail::glorot(cfg.hidden, 1, rng));
  // The gate bias starts low so gates open from below: early in training most
  // edges land on the environment side, which keeps the augmentation channel
  // populated while the sparsity pull raises the mean toward its target.
  p.emplace("gate.b2", Tensor::full(1, 1, -1.0));
  p.emplace("cls.w1", detail::glorot(cfg.hidden, cfg.hidden, rng));
  p.emplace("cls.b1", Tensor(1, cfg.hidden));
  p.emplace("cls.w2", detail::glorot(cfg.hidden, cfg.classes, rng));
  p.emplace("cls.b2", Tensor(1, cfg.classes));
  return p;
}

/// Model parameters bound onto a tape for one forward/backward pass.
struct BoundModel {
  const ModelConfig* cfg = nullptr;
  BoundParams values;

  const ad::Value& at(const std::string& name) const {
    auto it = values.find(name);
    require(it != values.end(), "model: missing parameter " + name);
    return it->second;
  }
};

inline BoundModel bind_model(ad::Tape& tape, const ModelConfig& cfg, const ParamStore& params) {
  return BoundModel{&cfg, bind_params(tape, params)};
}

inline ad::Value unit_edge_weights(ad::Tape& tape, const Graph& g) {
  return tape.constant(Tensor::full(g.edge_count(), 1, 1.0));
}

/// GIN encoding with per-edge multiplicative message gates. edge_weights is
/// (edge_count, 1); pass unit_edge_weights for the ungated view. Returns node
/// states (node_count, hidden).
inline ad::Value gin_encode(ad::Tape& tape, const BoundModel& m, const Graph& g, const ad::Value& edge_weights) {
  require(edge_weights.rows() == g.edge_count() && edge_weights.cols() == 1,
          "gin_encode: edge_weights must be (edge_count, 1)");
  ad::Value h = tape.constant(g.node_features);
  for (int k = 0; k < m.cfg->layers; ++k) {
    const std::string pre = detail::layer_prefix(k);
    ad::Value agg = ad::edge_weighted_aggregate(h, edge_weights, g.edges, /*eps=*/0.0);
    ad::Value z = ad::relu(ad::add(ad::matmul(agg, m.at(pre + "w1")), m.at(pre + "b1")));
    if (m.cfg->batch_norm && g.node_count > 1)
      z = ad::batch_norm_cols(z, m.at(pre + "bn_gamma"), m.at(pre + "bn_beta"));
    h = ad::relu(ad::add(ad::matmul(z, m.at(pre + "w2")), m.at(pre + "b2")));
  }
  return h;
}

/// Per-edge gate probabilities in (0, 1), shape (edge_count, 1). The head
/// scores both endpoint orders and averages the two post-sigmoid scores, so
/// the output is exactly symmetric in u, v.
inline ad::Value mask_head(ad::Tape& tape, const BoundModel& m, const ad::Value& node_states, const Graph& g) {
  const int e = g.edge_count();
  std::vector<int> us, vs;
  us.reserve(static_cast<std::size_t>(2) * e);
  vs.reserve(static_cast<std::size_t>(2) * e);
  for (const auto& [u, v] : g.edges) {
    us.push_back(u);
    vs.push_back(v);
  }
  for (const auto& [u, v] : g.edges) {
    us.push_back(v);
    vs.push_back(u);
  }
  ad::Value pairs = ad::hconcat(ad::gather_rows(node_states, us), ad::gather_rows(node_states, vs));  // (2e, 2H)
  ad::Value z = ad::relu(ad::add(ad::matmul(pairs, m.at("gate.w1")), m.at("gate.b1")));
  ad::Value scores = ad::sigmoid(ad::add(ad::matmul(z, m.at("gate.w2")), m.at("gate.b2")));  // (2e, 1)
  std::vector<int> fwd(static_cast<std::size_t>(e)), bwd(static_cast<std::size_t>(e));
  for (int i = 0; i < e; ++i) {
    fwd[static_cast<std::size_t>(i)] = i;
    bwd[static_cast<std::size_t>(i)] = e + i;
  }
  return ad::mul_scalar(ad::add(ad::gather_rows(scores, fwd), ad::gather_rows(scores, bwd)), 0.5);
}

/// Mean-pool readout over a node subset -> (1, hidden). Errors on an empty
/// subset; callers decide their fallback (e.g. whole graph).
inline ad::Value readout_mean(ad::Tape& tape, const ad::Value& node_states, const std::vector<int>& nodes) {
  require(!nodes.empty(), "readout: empty node subset");
  (void)tape;
  return ad::mean_rows(node_states, nodes);
}

inline ad::Value readout_mean_all(ad::Tape& tape, const ad::Value& node_states) {
  (void)tape;
  return ad::mean_rows(node_states);
}

/// Weighted mean readout: sum_v w_v h_v / sum_v w_v, weights (n, 1).
inline ad::Value readout_weighted(ad::Tape& tape, const ad::Value& node_states, const ad::Value& weights) {
  require(weights.rows() == node_states.rows() && weights.cols() == 1, "readout: weights must be (node_count, 1)");
  (void)tape;
  ad::Value total = ad::sum(weights);
  require(total.scalar() > 0.0, "readout: node weights sum to zero");
  return ad::div(ad::matmul(ad::transpose(weights), node_states), total);
}

/// Class logits (1, classes) from a graph embedding (1, hidden).
inline ad::Value classify(ad::Tape& tape, const BoundModel& m, const ad::Value& graph_embedding) {
  (void)tape;
  ad::Value z = ad::relu(ad::add(ad::matmul(graph_embedding, m.at("cls.w1")), m.at("cls.b1")));
  return ad::add(ad::matmul(z, m.at("cls.w2")), m.at("cls.b2"));
}

/// Multiclass softmax cross-entropy of one logit row against an integer label.
inline ad::Value cross_entropy(ad::Tape& tape, const ad::Value& logits, int label) {
  require(logits.rows() == 1, "cross_entropy: expected a single logit row");
  require(label >= 0 && label < logits.cols(), "cross_entropy: label out of range");
  Tensor onehot(logits.cols(), 1);
  onehot.v[static_cast<std::size_t>(label)] = 1.0;
  ad::Value picked = ad::matmul(logits, tape.constant(std::move(onehot)));  // (1,1)
  return ad::sub(ad::lse_rows(logits), picked);
}

inline int argmax_row(const Tensor& row) {
  int best = 0;
  for (int j = 1; j < row.cols; ++j)
    if (row.v[static_cast<std::size_t>(j)] > row.v[static_cast<std::size_t>(best)]) best = j;
  return best;
}

// ---------------------------------------------------------------------------
// Checkpoints: versioned JSON map of named shapes + flat arrays.
// ---------------------------------------------------------------------------

inline void save_checkpoint(const std::string& path, const ModelConfig& cfg, const ParamStore& params) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["arch"] = {{"feature_dim", cfg.feature_dim},
               {"hidden", cfg.hidden},
               {"layers", cfg.layers},
               {"classes", cfg.classes},
               {"batch_norm", cfg.batch_norm}};
  nlohmann::json ps = nlohmann::json::object();
  for (const auto& [name, t] : params) {
    ps[name] = {{"shape", {t.rows, t.cols}}, {"data", t.v}};
  }
  j["params"] = std::move(ps);
  AtomicFileWriter w(path);
  w.stream() << j.dump(2) << '\n';
  w.commit();
}

inline std::pair<ModelConfig, ParamStore> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open checkpoint: " + path);
  nlohmann::json j;
  try {
    in >> j;
    if (j.value("format_version", 0) != 1) throw CorpusError("unsupported checkpoint format version");
    ModelConfig cfg;
    const auto& arch = j.at("arch");
    cfg.feature_dim = arch.at("feature_dim").get<int>();
    cfg.hidden = arch.at("hidden").get<int>();
    cfg.layers = arch.at("layers").get<int>();
    cfg.classes = arch.at("classes").get<int>();
    cfg.batch_norm = arch.value("batch_norm", false);
    cfg.validate();
    ParamStore params;
    for (const auto& [name, entry] : j.at("params").items()) {
      const int rows = entry.at("shape").at(0).get<int>();
      const int cols = entry.at("shape").at(1).get<int>();
      Tensor t(rows, cols);
      const auto& data = entry.at("data");
      if (static_cast<int>(data.size()) != rows * cols) throw CorpusError("checkpoint tensor size mismatch: " + name);
      for (std::size_t i = 0; i < t.v.size(); ++i) t.v[i] = data.at(i).get<double>();
      params.emplace(name, std::move(t));
    }
    // Cross-check against a fresh init: same names, same shapes.
    const ParamStore expect = init_model_params(cfg, 0);
    if (expect.size() != params.size()) throw CorpusError("checkpoint parameter set does not match architecture");
    for (const auto& [name, t] : expect) {
      auto it = params.find(name);
      if (it == params.end() || !it->second.same_shape(t))
        throw CorpusError("checkpoint parameter missing or misshapen: " + name);
    }
    return {cfg, std::move(params)};
  } catch (const nlohmann::json::exception& e) {
    throw CorpusError(std::string("malformed checkpoint: ") + e.what());
  }
}

}  // namespace grbe
