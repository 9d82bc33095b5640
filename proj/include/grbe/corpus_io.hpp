#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "grbe/graph.hpp"

namespace grbe {

/// Malformed or inconsistent input data; the CLI maps it to the data-error
/// exit code.
struct CorpusError : std::runtime_error {
  explicit CorpusError(const std::string& what) : std::runtime_error(what) {}
};

struct Dataset {
  std::vector<Graph> graphs;
  std::vector<int> train_idx, val_idx, test_idx;
  int feature_dim = 0;
  int num_classes = 0;

  void index_splits() {
    train_idx.clear();
    val_idx.clear();
    test_idx.clear();
    for (int i = 0; i < static_cast<int>(graphs.size()); ++i) {
      const std::string& s = graphs[static_cast<std::size_t>(i)].split;
      if (s == "train") train_idx.push_back(i);
      else if (s == "val") val_idx.push_back(i);
      else if (s == "test") test_idx.push_back(i);
    }
  }
};

/// Writes to `<path>.partial`, renames into place on commit. A failure path
/// that skips commit() leaves only the .partial file behind.
class AtomicFileWriter {
 public:
  explicit AtomicFileWriter(const std::string& path)
      : path_(path), partial_(path + ".partial"), out_(partial_, std::ios::binary | std::ios::trunc) {
    if (!out_) throw CorpusError("cannot open for writing: " + partial_);
  }
  std::ofstream& stream() { return out_; }
  void commit() {
    out_.flush();
    if (!out_) throw CorpusError("write failed: " + partial_);
    out_.close();
    std::filesystem::rename(partial_, path_);
    committed_ = true;
  }
  ~AtomicFileWriter() {
    if (!committed_ && out_.is_open()) out_.close();
  }

 private:
  std::string path_, partial_;
  std::ofstream out_;
  bool committed_ = false;
};

namespace detail {
inline nlohmann::json graph_to_json(const Graph& g) {
  nlohmann::json j;
  j["id"] = g.graph_id;
  j["n"] = g.node_count;
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& [u, v] : g.edges) edges.push_back({u, v});
  j["edges"] = std::move(edges);
  nlohmann::json x = nlohmann::json::array();
  for (int i = 0; i < g.node_count; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int k = 0; k < g.feature_dim(); ++k) row.push_back(g.node_features.at(i, k));
    x.push_back(std::move(row));
  }
  j["x"] = std::move(x);
  j["y"] = g.label;
  if (g.gt_rationale) {
    nlohmann::json flags = nlohmann::json::array();
    for (std::uint8_t f : *g.gt_rationale) flags.push_back(static_cast<int>(f));
    j["gt_rationale"] = std::move(flags);
  }
  if (!g.split.empty()) j["split"] = g.split;
  return j;
}

inline Graph graph_from_json(const nlohmann::json& j, long line_no) {
  const auto fail = [&](const std::string& msg) -> void {
    throw CorpusError("line " + std::to_string(line_no) + ": " + msg);
  };
  Graph g;
  try {
    if (!j.contains("n") || !j.contains("edges") || !j.contains("x") || !j.contains("y"))
      fail("missing one of required keys n/edges/x/y");
    g.node_count = j.at("n").get<int>();
    if (g.node_count < 1) fail("n must be >= 1");
    g.graph_id = j.value("id", static_cast<long>(line_no - 1));
    g.label = j.at("y").get<int>();
    if (g.label < 0) fail("y must be >= 0");
    g.split = j.value("split", std::string());
    const auto& x = j.at("x");
    if (!x.is_array() || static_cast<int>(x.size()) != g.node_count) fail("x must have one row per node");
    const int fdim = x.empty() ? 0 : static_cast<int>(x.at(0).size());
    if (fdim < 1) fail("x rows must be non-empty");
    g.node_features = Tensor(g.node_count, fdim);
    for (int i = 0; i < g.node_count; ++i) {
      const auto& row = x.at(static_cast<std::size_t>(i));
      if (static_cast<int>(row.size()) != fdim) fail("ragged feature rows");
      for (int k = 0; k < fdim; ++k) g.node_features.at(i, k) = row.at(static_cast<std::size_t>(k)).get<double>();
    }
    for (const auto& e : j.at("edges")) {
      if (!e.is_array() || e.size() != 2) fail("edges must be [u, v] pairs");
      const int u = e.at(0).get<int>();
      const int v = e.at(1).get<int>();
      if (u == v) fail("self-loop edge");
      g.edges.push_back(normalized_edge(u, v));
    }
    if (j.contains("gt_rationale")) {
      std::vector<std::uint8_t> flags;
      for (const auto& f : j.at("gt_rationale")) flags.push_back(f.get<int>() ? 1 : 0);
      g.gt_rationale = std::move(flags);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("bad JSON value: ") + e.what());
  }
  try {
    validate_graph(g);
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
  return g;
}
}  // namespace detail

/// One JSON object per line. `extra_per_line`, when given, merges additional
/// keys (e.g. augmentation provenance) into the matching line.
inline void write_jsonl(const std::string& path, const std::vector<Graph>& graphs,
                        const std::vector<nlohmann::json>* extra_per_line = nullptr) {
  if (extra_per_line) require(extra_per_line->size() == graphs.size(), "write_jsonl: extra lines length mismatch");
  AtomicFileWriter w(path);
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    nlohmann::json j = detail::graph_to_json(graphs[i]);
    if (extra_per_line)
      for (const auto& [key, value] : (*extra_per_line)[i].items()) j[key] = value;
    w.stream() << j.dump() << '\n';
  }
  w.commit();
}

inline Dataset load_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open corpus: " + path);
  Dataset ds;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw CorpusError("line " + std::to_string(line_no) + ": invalid JSON: " + e.what());
    }
    ds.graphs.push_back(detail::graph_from_json(j, line_no));
  }
  if (ds.graphs.empty()) throw CorpusError("empty corpus: " + path);
  ds.feature_dim = ds.graphs.front().feature_dim();
  for (const Graph& g : ds.graphs) {
    if (g.feature_dim() != ds.feature_dim) throw CorpusError("inconsistent feature dimensions across corpus");
    ds.num_classes = std::max(ds.num_classes, g.label + 1);
  }
  ds.index_splits();
  return ds;
}

}  // namespace grbe
