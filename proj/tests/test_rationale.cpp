#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "grbe/prse.hpp"

using grbe::ConcreteSampleConfig;
using grbe::Graph;
using grbe::RngStream;
using grbe::SubgraphSplit;
using grbe::Tensor;
namespace ad = grbe::ad;

namespace {

/// Two 4-cycles joined by one edge. Edges 0-3 form the selected block, edges
/// 4-8 (including the joint {3,4}) the complement. Node features carry the
/// node id so views can be mapped back to parent coordinates.
Graph two_ring_parent() {
  Graph g;
  g.node_count = 8;
  g.edges = {{0, 1}, {1, 2}, {2, 3}, {0, 3}, {4, 5}, {5, 6}, {6, 7}, {4, 7}, {3, 4}};
  g.node_features = Tensor(8, 1);
  for (int v = 0; v < 8; ++v) g.node_features.at(v, 0) = v;
  g.label = 1;
  return g;
}

SubgraphSplit two_ring_split(const Graph& g) {
  std::vector<std::uint8_t> hard = {1, 1, 1, 1, 0, 0, 0, 0, 0};
  std::vector<double> relaxed = {0.9, 0.9, 0.9, 0.9, 0.1, 0.1, 0.1, 0.1, 0.1};
  return grbe::partition(g, hard, relaxed);
}

std::set<grbe::EdgePair> parent_space_edges(const Graph& view) {
  std::set<grbe::EdgePair> out;
  for (const auto& [u, v] : view.edges)
    out.insert(grbe::normalized_edge(static_cast<int>(view.node_features.at(u, 0)),
                                     static_cast<int>(view.node_features.at(v, 0))));
  return out;
}

}  // namespace

TEST_CASE("relaxed gate closed-form points") {
  // p = 0.5, u = 0.5: both logits vanish, so the gate sits at 0.5 at any temperature.
  for (double t : {0.1, 1.0, 3.0}) REQUIRE(grbe::concrete_relaxed(0.5, 0.5, t) == Catch::Approx(0.5).margin(1e-15));
  // p = 0.5 contributes nothing at t = 1: the gate reproduces the noise.
  REQUIRE(grbe::concrete_relaxed(0.5, 0.9, 1.0) == Catch::Approx(0.9).epsilon(1e-12));
  REQUIRE(grbe::concrete_relaxed(0.5, 0.2, 1.0) == Catch::Approx(0.2).epsilon(1e-12));
  // near-zero temperature collapses to the hard indicator of u > 1 - p
  REQUIRE(grbe::concrete_relaxed(0.7, 0.35, 0.01) == Catch::Approx(1.0).margin(1e-8));
  REQUIRE(grbe::concrete_relaxed(0.7, 0.25, 0.01) == Catch::Approx(0.0).margin(1e-8));
}

TEST_CASE("hard sample rate equals the gate probability at every temperature") {
  RngStream rng(8);
  const int n = 100000;
  for (double p : {0.1, 0.3, 0.5, 0.7, 0.9}) {
    for (double t : {0.5, 2.0}) {
      long over = 0;
      for (int i = 0; i < n; ++i)
        if (grbe::concrete_relaxed(p, rng.uniform_open01(), t) > 0.5) ++over;
      const double sigma = std::sqrt(p * (1.0 - p) / n);
      INFO("p " << p << " t " << t << " rate " << static_cast<double>(over) / n);
      REQUIRE(std::fabs(static_cast<double>(over) / n - p) < 4.0 * sigma);
    }
  }
}

TEST_CASE("tape relaxation agrees with the scalar form and differentiates") {
  ad::Tape tape;
  RngStream rng(21);
  const std::vector<double> probs = {0.12, 0.5, 0.88, 0.997};
  std::vector<double> noise_logits;
  std::vector<double> us;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double u = rng.uniform_open01();
    us.push_back(u);
    noise_logits.push_back(grbe::logit_of_noise(u));
  }
  const ad::Value p = tape.leaf(Tensor::column(probs));
  const ad::Value b = grbe::concrete_relax_tape(tape, p, noise_logits, 0.7);
  for (std::size_t i = 0; i < probs.size(); ++i)
    REQUIRE(b.data().v[i] == Catch::Approx(grbe::concrete_relaxed(probs[i], us[i], 0.7)).epsilon(1e-12));

  // finite-difference the first coordinate through the scalar form
  tape.backward(ad::sum(b));
  const double h = 1e-6;
  const double fd = (grbe::concrete_relaxed(probs[0] + h, us[0], 0.7) -
                     grbe::concrete_relaxed(probs[0] - h, us[0], 0.7)) / (2 * h);
  REQUIRE(tape.grad(p).v[0] == Catch::Approx(fd).epsilon(1e-5));

  REQUIRE_THROWS_AS(grbe::concrete_relax_tape(tape, p, {0.0}, 0.7), std::invalid_argument);
  REQUIRE_THROWS_AS(grbe::concrete_relax_tape(tape, p, noise_logits, 0.0), std::invalid_argument);
}

TEST_CASE("sparsity penalty worked values") {
  REQUIRE(grbe::sparsity_loss_value({0.7, 0.7, 0.7}, 0.7) == Catch::Approx(0.0).margin(1e-15));
  REQUIRE(grbe::sparsity_loss_value({0.5, 0.5}, 0.7) == Catch::Approx(0.2).epsilon(1e-12));
  REQUIRE(grbe::sparsity_loss_value({1.0, 0.0, 0.5, 0.5}, 0.2) == Catch::Approx(0.3).epsilon(1e-12));

  ad::Tape tape;
  const ad::Value m = tape.leaf(Tensor::column({0.5, 0.5}));
  const ad::Value l = grbe::sparsity_loss(tape, m, 0.7);
  REQUIRE(l.scalar() == Catch::Approx(0.2).epsilon(1e-12));
  tape.backward(l);
  // mean is below target: pushing any gate up reduces the loss at rate 1/n
  REQUIRE(tape.grad(m).v[0] == Catch::Approx(-0.5).epsilon(1e-12));
  REQUIRE(tape.grad(m).v[1] == Catch::Approx(-0.5).epsilon(1e-12));
}

TEST_CASE("rationale sampling: eval mode thresholds, train mode calibrates") {
  const Graph g = two_ring_parent();
  const std::vector<double> mask = {0.9, 0.8, 0.7, 0.6, 0.4, 0.3, 0.2, 0.1, 0.45};
  RngStream rng(5);

  ConcreteSampleConfig eval_cfg;
  eval_cfg.hard_eval = true;
  const SubgraphSplit se = grbe::sample_rationale(g, mask, eval_cfg, rng);
  REQUIRE(se.rationale_edges == std::vector<int>{0, 1, 2, 3});
  for (std::size_t e = 0; e < mask.size(); ++e)
    REQUIRE(se.relaxed_indicator[e] == (mask[e] > 0.5 ? 1.0 : 0.0));

  // train mode: per-edge hard rates follow the mask probabilities
  ConcreteSampleConfig train_cfg;
  train_cfg.temperature = 1.3;
  const int trials = 20000;
  std::vector<long> on(mask.size(), 0);
  for (int trial = 0; trial < trials; ++trial) {
    const SubgraphSplit s = grbe::sample_rationale(g, mask, train_cfg, rng);
    for (std::size_t e = 0; e < mask.size(); ++e) {
      REQUIRE(s.hard_indicator[e] == (s.relaxed_indicator[e] > 0.5 ? 1 : 0));
      on[e] += s.hard_indicator[e];
    }
  }
  for (std::size_t e = 0; e < mask.size(); ++e) {
    const double rate = static_cast<double>(on[e]) / trials;
    const double sigma = std::sqrt(mask[e] * (1.0 - mask[e]) / trials);
    REQUIRE(std::fabs(rate - mask[e]) < 4.0 * sigma);
  }

  REQUIRE_THROWS_AS(grbe::sample_rationale(g, {0.5}, train_cfg, rng), std::invalid_argument);
}

TEST_CASE("positive views keep the selected block intact and thin the rest") {
  const Graph g = two_ring_parent();
  const SubgraphSplit s = two_ring_split(g);
  const std::set<grbe::EdgePair> rationale = {{0, 1}, {1, 2}, {2, 3}, {0, 3}};
  const std::set<grbe::EdgePair> environment = {{4, 5}, {5, 6}, {6, 7}, {4, 7}, {3, 4}};

  RngStream rng(33);
  const int trials = 3000;
  long env_kept = 0;
  for (int trial = 0; trial < trials; ++trial) {
    bool degenerate = true;
    auto [v1, v2] = grbe::make_positive_pair(s, 0.5, rng, &degenerate);
    REQUIRE_FALSE(degenerate);
    for (const Graph* view : {&v1, &v2}) {
      const std::set<grbe::EdgePair> edges = parent_space_edges(*view);
      for (const auto& e : rationale) REQUIRE(edges.count(e) == 1);
      long extra = 0;
      for (const auto& e : edges)
        if (!rationale.count(e)) {
          REQUIRE(environment.count(e) == 1);
          ++extra;
        }
      env_kept += extra;
      REQUIRE(view->label == g.label);
    }
    // the two draws are independent: occasionally unequal (checked in aggregate below)
  }
  // 2 views/trial, 5 environment edges each kept with probability 0.5
  const double expect = 0.5 * 5 * 2 * trials;
  const double sigma = std::sqrt(0.25 * 5 * 2 * trials);
  REQUIRE(std::fabs(static_cast<double>(env_kept) - expect) < 4.0 * sigma);
}

TEST_CASE("the negative view keeps the environment and thins the selection") {
  const Graph g = two_ring_parent();
  const SubgraphSplit s = two_ring_split(g);
  const std::set<grbe::EdgePair> rationale = {{0, 1}, {1, 2}, {2, 3}, {0, 3}};
  const std::set<grbe::EdgePair> environment = {{4, 5}, {5, 6}, {6, 7}, {4, 7}, {3, 4}};

  RngStream rng(44);
  const int trials = 3000;
  long rat_kept = 0;
  for (int trial = 0; trial < trials; ++trial) {
    bool degenerate = true;
    const Graph view = grbe::make_negative(s, 0.5, rng, &degenerate);
    REQUIRE_FALSE(degenerate);
    const std::set<grbe::EdgePair> edges = parent_space_edges(view);
    for (const auto& e : environment) REQUIRE(edges.count(e) == 1);
    for (const auto& e : edges)
      if (!environment.count(e)) {
        REQUIRE(rationale.count(e) == 1);
        ++rat_kept;
      }
  }
  const double expect = 0.5 * 4 * trials;
  const double sigma = std::sqrt(0.25 * 4 * trials);
  REQUIRE(std::fabs(static_cast<double>(rat_kept) - expect) < 4.0 * sigma);
}

TEST_CASE("views degenerate to parent copies when a side is empty") {
  Graph g = two_ring_parent();
  RngStream rng(55);

  // everything selected: no environment to thin
  const SubgraphSplit all_rat =
      grbe::partition(g, std::vector<std::uint8_t>(9, 1), std::vector<double>(9, 0.9));
  bool degenerate = false;
  auto [v1, v2] = grbe::make_positive_pair(all_rat, 0.5, rng, &degenerate);
  REQUIRE(degenerate);
  REQUIRE(grbe::canonical_edges(v1) == grbe::canonical_edges(g));
  REQUIRE(grbe::canonical_edges(v2) == grbe::canonical_edges(g));

  // fully-thinned selection with no environment nodes: parent fallback
  const Graph gone = grbe::make_negative(all_rat, 0.0, rng, &degenerate);
  REQUIRE_FALSE(degenerate);  // the rationale side itself was not empty
  REQUIRE(grbe::canonical_edges(gone) == grbe::canonical_edges(g));

  // nothing selected: the negative view keeps the whole parent
  const SubgraphSplit all_env =
      grbe::partition(g, std::vector<std::uint8_t>(9, 0), std::vector<double>(9, 0.1));
  const Graph neg = grbe::make_negative(all_env, 0.5, rng, &degenerate);
  REQUIRE(degenerate);
  REQUIRE(grbe::canonical_edges(neg) == grbe::canonical_edges(g));
}

TEST_CASE("mutual-information estimate: identical batches score -log N") {
  for (int n : {2, 8, 32}) {
    ad::Tape tape;
    Tensor row(1, 6);
    for (int j = 0; j < 6; ++j) row.v[static_cast<std::size_t>(j)] = 0.3 * j - 1.0;
    std::vector<ad::Value> rows(static_cast<std::size_t>(n), tape.constant(row));
    const ad::Value batch = ad::vconcat(rows);
    for (double tau : {0.1, 0.5, 1.0}) {
      const ad::Value i = grbe::infonce(tape, batch, batch, tau);
      REQUIRE(i.scalar() == Catch::Approx(-std::log(static_cast<double>(n))).margin(1e-9));
    }
  }
}

TEST_CASE("mutual-information estimate is never positive") {
  RngStream rng(66);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_int(5));
    const int d = 3 + static_cast<int>(rng.uniform_int(4));
    Tensor a(n, d), b(n, d);
    for (double& x : a.v) x = rng.uniform(-3.0, 3.0);
    for (double& x : b.v) x = rng.uniform(-3.0, 3.0);
    ad::Tape tape;
    const double tau = 0.05 + rng.uniform01();
    const bool norm = rng.bernoulli(0.5);
    const ad::Value i = grbe::infonce(tape, tape.constant(a), tape.constant(b), tau, norm);
    REQUIRE(i.scalar() <= 1e-12);
  }

  ad::Tape tape;
  const ad::Value one_row = tape.constant(Tensor::full(1, 4, 1.0));
  REQUIRE_THROWS_AS(grbe::infonce(tape, one_row, one_row, 0.5), std::invalid_argument);
}

TEST_CASE("contrastive objective is finite and deterministic under a fixed seed") {
  const Graph g1 = two_ring_parent();
  Graph g2 = two_ring_parent();
  g2.node_features.at(2, 0) = 9.5;  // make the second graph distinct
  const SubgraphSplit s1 = two_ring_split(g1);
  const SubgraphSplit s2 = two_ring_split(g2);

  grbe::ModelConfig mcfg;
  mcfg.feature_dim = 1;
  mcfg.hidden = 6;
  mcfg.layers = 2;
  const grbe::ParamStore params = grbe::init_model_params(mcfg, 7);
  grbe::ContrastiveConfig ccfg;
  ccfg.tau = 0.5;

  auto run = [&]() {
    RngStream rng(99);
    ad::Tape tape;
    const grbe::BoundModel m = grbe::bind_model(tape, mcfg, params);
    std::vector<ad::Value> anchors;
    for (const Graph* g : std::initializer_list<const Graph*>{&g1, &g2})
      anchors.push_back(grbe::readout_mean_all(tape, grbe::gin_encode(tape, m, *g, grbe::unit_edge_weights(tape, *g))));
    const ad::Value l = grbe::contrastive_loss(tape, m, {&s1, &s2}, anchors, ccfg, rng);
    return l.scalar();
  };
  const double first = run();
  REQUIRE(std::isfinite(first));
  REQUIRE(run() == first);
}
