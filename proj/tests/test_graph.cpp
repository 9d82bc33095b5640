#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "grbe/corpus_io.hpp"
#include "grbe/graph.hpp"
#include "grbe/rng.hpp"

using grbe::Graph;
using grbe::RngStream;
using grbe::SubgraphSplit;
using grbe::Tensor;

namespace {

Graph random_connected_graph(RngStream& rng, int min_nodes = 4, int max_nodes = 12) {
  Graph g;
  g.node_count = min_nodes + rng.uniform_int(max_nodes - min_nodes + 1);
  // Random spanning tree first, then extra edges.
  for (int v = 1; v < g.node_count; ++v) g.edges.push_back(grbe::normalized_edge(v, rng.uniform_int(v)));
  std::set<grbe::EdgePair> seen(g.edges.begin(), g.edges.end());
  const int extra = rng.uniform_int(g.node_count);
  for (int k = 0; k < extra; ++k) {
    const int u = rng.uniform_int(g.node_count);
    const int v = rng.uniform_int(g.node_count);
    if (u == v) continue;
    const grbe::EdgePair e = grbe::normalized_edge(u, v);
    if (seen.insert(e).second) g.edges.push_back(e);
  }
  g.node_features = Tensor(g.node_count, 3);
  for (double& x : g.node_features.v) x = rng.uniform01();
  g.label = rng.uniform_int(3);
  std::sort(g.edges.begin(), g.edges.end());
  grbe::validate_graph(g);
  return g;
}

}  // namespace

TEST_CASE("validate_graph rejects malformed graphs") {
  Graph g;
  g.node_count = 3;
  g.node_features = Tensor(3, 2);
  g.edges = {{0, 1}};
  REQUIRE_NOTHROW(grbe::validate_graph(g));

  Graph bad = g;
  bad.edges.push_back({1, 1});
  REQUIRE_THROWS_AS(grbe::validate_graph(bad), std::invalid_argument);  // self-loop

  bad = g;
  bad.edges.push_back({2, 1});
  REQUIRE_THROWS_AS(grbe::validate_graph(bad), std::invalid_argument);  // not u < v

  bad = g;
  bad.edges.push_back({0, 1});
  REQUIRE_THROWS_AS(grbe::validate_graph(bad), std::invalid_argument);  // duplicate

  bad = g;
  bad.edges.push_back({0, 7});
  REQUIRE_THROWS_AS(grbe::validate_graph(bad), std::invalid_argument);  // out of range

  bad = g;
  bad.node_features = Tensor(2, 2);
  REQUIRE_THROWS_AS(grbe::validate_graph(bad), std::invalid_argument);  // feature rows
}

TEST_CASE("partition splits edges exactly by the indicator") {
  RngStream rng(42);
  Graph g = random_connected_graph(rng);
  std::vector<std::uint8_t> hard(static_cast<std::size_t>(g.edge_count()));
  std::vector<double> relaxed(hard.size(), 0.5);
  hard[0] = 1;
  if (hard.size() > 2) hard[2] = 1;
  const SubgraphSplit s = grbe::partition(g, hard, relaxed);
  REQUIRE(s.rationale_edges.size() + s.environment_edges.size() == static_cast<std::size_t>(g.edge_count()));
  for (int e : s.rationale_edges) REQUIRE(s.hard_indicator[static_cast<std::size_t>(e)] == 1);
  for (int e : s.environment_edges) REQUIRE(s.hard_indicator[static_cast<std::size_t>(e)] == 0);

  // worked boundary cases
  const SubgraphSplit all1 =
      grbe::partition(g, std::vector<std::uint8_t>(hard.size(), 1), std::vector<double>(hard.size(), 1.0));
  REQUIRE(all1.environment_edges.empty());
  REQUIRE(static_cast<int>(all1.rationale_edges.size()) == g.edge_count());

  REQUIRE_THROWS_AS(grbe::partition(g, std::vector<std::uint8_t>(2, 0), relaxed), std::invalid_argument);
  std::vector<double> out_of_range(hard.size(), 1.5);
  REQUIRE_THROWS_AS(grbe::partition(g, hard, out_of_range), std::invalid_argument);
}

TEST_CASE("four-edge worked example: indicator (1,1,0,0)") {
  Graph g;
  g.node_count = 4;
  g.edges = {{0, 1}, {0, 2}, {1, 3}, {2, 3}};
  g.node_features = Tensor(4, 1);
  const SubgraphSplit s = grbe::partition(g, {1, 1, 0, 0}, {1, 1, 0, 0});
  REQUIRE(s.rationale_edges == std::vector<int>{0, 1});
  REQUIRE(s.environment_edges == std::vector<int>{2, 3});
}

TEST_CASE("node_sides: incident-rationale-edge rule, isolated nodes to environment") {
  Graph g;
  g.node_count = 5;  // node 4 is isolated
  g.edges = {{0, 1}, {1, 2}, {2, 3}};
  g.node_features = Tensor(5, 1);
  const SubgraphSplit s = grbe::partition(g, {1, 0, 0}, {1, 0, 0});
  const std::vector<std::uint8_t> side = grbe::node_sides(s);
  REQUIRE(side == std::vector<std::uint8_t>{1, 1, 0, 0, 0});
  REQUIRE(grbe::rationale_nodes(s) == std::vector<int>{0, 1});
}

TEST_CASE("partition/merge round-trip preserves the canonical edge multiset") {
  // Randomized structural trials: split with a random indicator, rebuild from
  // the parts plus the cut set, compare canonical edges of the reconstruction
  // against the parent (node identity is permuted, so compare via the parts'
  // source mapping).
  RngStream rng(4242);
  const int trials = 10000;
  for (int trial = 0; trial < trials; ++trial) {
    Graph g = random_connected_graph(rng);
    std::vector<std::uint8_t> hard(static_cast<std::size_t>(g.edge_count()));
    std::vector<double> relaxed(hard.size());
    for (std::size_t e = 0; e < hard.size(); ++e) {
      relaxed[e] = rng.uniform01();
      hard[e] = relaxed[e] > 0.5 ? 1 : 0;
    }
    const SubgraphSplit s = grbe::partition(g, hard, relaxed);
    const grbe::PartitionParts parts = grbe::split_parts(s);
    if (s.rationale_edges.empty()) {
      // Nothing was selected: there is no rationale side to anchor a merge.
      REQUIRE_THROWS_AS(grbe::merge(parts.rationale, parts.environment, parts.cut_bridges, g.label),
                        std::invalid_argument);
      continue;
    }

    // Reassembled graph in the merged index space.
    const Graph back = grbe::merge(parts.rationale, parts.environment, parts.cut_bridges, g.label, g.graph_id);
    REQUIRE(back.node_count == g.node_count);
    REQUIRE(back.edge_count() == g.edge_count());
    REQUIRE(back.label == g.label);

    // Map merged ids back to parent ids and compare edge multisets exactly.
    std::vector<int> to_parent;
    to_parent.insert(to_parent.end(), parts.rationale.source_nodes.begin(), parts.rationale.source_nodes.end());
    to_parent.insert(to_parent.end(), parts.environment.source_nodes.begin(), parts.environment.source_nodes.end());
    std::vector<grbe::EdgePair> mapped;
    for (const auto& [u, v] : back.edges)
      mapped.push_back(grbe::normalized_edge(to_parent[static_cast<std::size_t>(u)], to_parent[static_cast<std::size_t>(v)]));
    std::sort(mapped.begin(), mapped.end());
    REQUIRE(mapped == grbe::canonical_edges(g));

    // Features must follow their nodes through the reindexing.
    for (int i = 0; i < back.node_count; ++i)
      for (int j = 0; j < 3; ++j)
        REQUIRE(back.node_features.at(i, j) == g.node_features.at(to_parent[static_cast<std::size_t>(i)], j));
  }
}

TEST_CASE("merge worked example: 5 + 7 + 2 edges") {
  grbe::GraphPart rat;
  rat.node_count = 4;
  rat.edges = {{0, 1}, {0, 2}, {1, 2}, {1, 3}, {2, 3}};
  rat.node_features = Tensor::full(4, 2, 1.0);
  grbe::GraphPart env;
  env.node_count = 5;
  env.edges = {{0, 1}, {0, 2}, {1, 2}, {1, 3}, {2, 4}, {3, 4}, {0, 4}};
  env.node_features = Tensor::full(5, 2, 2.0);
  const std::vector<grbe::EdgePair> bridges = {{0, 4}, {3, 8}};
  const Graph merged = grbe::merge(rat, env, bridges, 2);
  REQUIRE(merged.edge_count() == 5 + 7 + 2);
  REQUIRE(merged.node_count == 9);
  REQUIRE(merged.label == 2);
  // environment block offset
  REQUIRE(merged.edges[5] == grbe::EdgePair{4, 5});
  // feature blocks carried over
  REQUIRE(merged.node_features.at(3, 0) == 1.0);
  REQUIRE(merged.node_features.at(4, 0) == 2.0);

  REQUIRE_THROWS_AS(grbe::merge(rat, env, std::vector<grbe::EdgePair>{{0, 0}}, 0), std::invalid_argument);
  REQUIRE_THROWS_AS(grbe::merge(rat, env, std::vector<grbe::EdgePair>{{0, 1}}, 0), std::invalid_argument);  // dup
}

TEST_CASE("perturb_edges keeps each edge independently with the given probability") {
  RngStream rng(777);
  std::vector<int> edges(40);
  for (int i = 0; i < 40; ++i) edges[static_cast<std::size_t>(i)] = i;

  for (double keep : {0.25, 0.5, 0.8}) {
    long total = 0;
    const int trials = 10000;
    for (int t = 0; t < trials; ++t) total += static_cast<long>(grbe::perturb_edges(edges, keep, rng).size());
    const double expect = keep * 40 * trials;
    const double sigma = std::sqrt(keep * (1.0 - keep) * 40 * trials);
    REQUIRE(std::fabs(total - expect) < 4.0 * sigma);
  }

  REQUIRE(grbe::perturb_edges(edges, 1.0, rng).size() == 40);
  REQUIRE(grbe::perturb_edges(edges, 0.0, rng).empty());
  REQUIRE_THROWS_AS(grbe::perturb_edges(edges, 1.2, rng), std::invalid_argument);
}

TEST_CASE("jsonl round-trip preserves graphs byte-for-byte on rewrite") {
  RngStream rng(31337);
  std::vector<Graph> graphs;
  for (int i = 0; i < 20; ++i) {
    Graph g = random_connected_graph(rng);
    g.graph_id = i;
    g.split = i < 10 ? "train" : (i < 15 ? "val" : "test");
    if (i % 2 == 0) {
      std::vector<std::uint8_t> flags(static_cast<std::size_t>(g.edge_count()));
      for (std::size_t e = 0; e < flags.size(); ++e) flags[e] = rng.bernoulli(0.4) ? 1 : 0;
      g.gt_rationale = flags;
    }
    graphs.push_back(std::move(g));
  }

  const std::string path = (std::filesystem::temp_directory_path() / "grbe_test_roundtrip.jsonl").string();
  grbe::write_jsonl(path, graphs);
  const grbe::Dataset ds = grbe::load_jsonl(path);
  REQUIRE(ds.graphs.size() == graphs.size());
  REQUIRE(ds.train_idx.size() == 10);
  REQUIRE(ds.val_idx.size() == 5);
  REQUIRE(ds.test_idx.size() == 5);
  REQUIRE(ds.feature_dim == 3);
  REQUIRE(ds.num_classes == 3);

  for (std::size_t i = 0; i < graphs.size(); ++i) {
    REQUIRE(ds.graphs[i].node_count == graphs[i].node_count);
    REQUIRE(ds.graphs[i].edges == graphs[i].edges);
    REQUIRE(ds.graphs[i].label == graphs[i].label);
    REQUIRE(ds.graphs[i].split == graphs[i].split);
    REQUIRE(ds.graphs[i].gt_rationale == graphs[i].gt_rationale);
    REQUIRE(ds.graphs[i].node_features.v == graphs[i].node_features.v);  // exact doubles
  }

  // Write-out again: shortest-round-trip serialization makes reruns byte-identical.
  const std::string path2 = path + ".again";
  grbe::write_jsonl(path2, ds.graphs);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::stringstream b1, b2;
  b1 << f1.rdbuf();
  b2 << f2.rdbuf();
  REQUIRE(b1.str() == b2.str());
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST_CASE("load_jsonl rejects malformed corpora with line diagnostics") {
  namespace fs = std::filesystem;
  const std::string path = (fs::temp_directory_path() / "grbe_test_badcorpus.jsonl").string();

  auto write_and_load = [&](const std::string& content) {
    std::ofstream out(path, std::ios::trunc);
    out << content;
    out.close();
    return grbe::load_jsonl(path);
  };

  REQUIRE_THROWS_AS(write_and_load(""), grbe::CorpusError);          // empty corpus
  REQUIRE_THROWS_AS(write_and_load("{not json\n"), grbe::CorpusError);
  REQUIRE_THROWS_AS(write_and_load(R"({"n":2,"edges":[],"x":[[1],[1]]})" "\n"), grbe::CorpusError);  // missing y
  REQUIRE_THROWS_AS(write_and_load(R"({"n":2,"edges":[[0,0]],"x":[[1],[1]],"y":0})" "\n"), grbe::CorpusError);
  REQUIRE_THROWS_AS(write_and_load(R"({"n":2,"edges":[[0,1]],"x":[[1]],"y":0})" "\n"), grbe::CorpusError);

  try {
    write_and_load("{\"n\":1,\"edges\":[],\"x\":[[1]],\"y\":0}\n{bad\n");
  } catch (const grbe::CorpusError& e) {
    REQUIRE(std::string(e.what()).find("line 2") != std::string::npos);
  }
  fs::remove(path);

  REQUIRE_THROWS_AS(grbe::load_jsonl("/nonexistent/nowhere.jsonl"), grbe::CorpusError);
}

TEST_CASE("atomic writer leaves only a .partial file when commit is skipped") {
  namespace fs = std::filesystem;
  const std::string path = (fs::temp_directory_path() / "grbe_test_atomic.json").string();
  fs::remove(path);
  fs::remove(path + ".partial");
  {
    grbe::AtomicFileWriter w(path);
    w.stream() << "{}\n";
    // destructor without commit: simulated failure
  }
  REQUIRE_FALSE(fs::exists(path));
  REQUIRE(fs::exists(path + ".partial"));
  fs::remove(path + ".partial");
  {
    grbe::AtomicFileWriter w(path);
    w.stream() << "{}\n";
    w.commit();
  }
  REQUIRE(fs::exists(path));
  REQUIRE_FALSE(fs::exists(path + ".partial"));
  fs::remove(path);
}
