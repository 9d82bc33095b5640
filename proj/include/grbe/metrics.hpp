#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include "grbe/graph.hpp"
#include "grbe/tensor.hpp"

namespace grbe {

inline double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
  require(!predictions.empty(), "accuracy: empty input");
  require(predictions.size() == labels.size(), "accuracy: length mismatch");
  long hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) hits += predictions[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

namespace detail {

/// Rank-statistic ROC-AUC with midpoint ranks for tied scores:
/// AUC = (R_+ - n_+(n_+ + 1)/2) / (n_+ n_-), R_+ = rank sum of positives.
inline double auc_from_pairs(std::vector<std::pair<double, std::uint8_t>>& pool) {
  std::sort(pool.begin(), pool.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum_pos = 0.0;
  long n_pos = 0, n_neg = 0;
  std::size_t i = 0;
  while (i < pool.size()) {
    std::size_t j = i;
    while (j < pool.size() && pool[j].first == pool[i].first) ++j;
    const double mid_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));  // 1-based midpoint
    for (std::size_t k = i; k < j; ++k) {
      if (pool[k].second) {
        rank_sum_pos += mid_rank;
        ++n_pos;
      } else {
        ++n_neg;
      }
    }
    i = j;
  }
  require(n_pos > 0 && n_neg > 0, "rationale_auc: need both positive and negative edges");
  return (rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1)) /
         (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

}  // namespace detail

/// Edge-level ROC-AUC of mask scores against ground-truth rationale flags.
/// Micro mode (default) pools all edges of all graphs into one ranking; macro
/// averages per-graph AUCs over the graphs that have both edge classes.
inline double rationale_auc(const std::vector<std::vector<double>>& edge_scores,
                            const std::vector<std::vector<std::uint8_t>>& gt_flags, bool macro = false) {
  require(edge_scores.size() == gt_flags.size(), "rationale_auc: graph count mismatch");
  require(!edge_scores.empty(), "rationale_auc: empty input");
  for (std::size_t g = 0; g < edge_scores.size(); ++g)
    require(edge_scores[g].size() == gt_flags[g].size(), "rationale_auc: per-graph length mismatch");

  if (macro) {
    double sum = 0.0;
    long used = 0;
    for (std::size_t g = 0; g < edge_scores.size(); ++g) {
      bool has_pos = false, has_neg = false;
      for (std::uint8_t f : gt_flags[g]) (f ? has_pos : has_neg) = true;
      if (!has_pos || !has_neg) continue;
      std::vector<std::pair<double, std::uint8_t>> pool;
      for (std::size_t e = 0; e < edge_scores[g].size(); ++e) pool.push_back({edge_scores[g][e], gt_flags[g][e]});
      sum += detail::auc_from_pairs(pool);
      ++used;
    }
    require(used > 0, "rationale_auc: no graph has both edge classes");
    return sum / static_cast<double>(used);
  }

  std::vector<std::pair<double, std::uint8_t>> pool;
  for (std::size_t g = 0; g < edge_scores.size(); ++g)
    for (std::size_t e = 0; e < edge_scores[g].size(); ++e) pool.push_back({edge_scores[g][e], gt_flags[g][e]});
  return detail::auc_from_pairs(pool);
}

/// Jensen-Shannon divergence (natural log): JS = KL(p||m)/2 + KL(q||m)/2 with
/// m = (p+q)/2. Zero bins contribute nothing on their own side; the value is
/// bounded by ln 2.
inline double js_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  require(p.size() == q.size(), "js_divergence: support size mismatch");
  require(!p.empty(), "js_divergence: empty distributions");
  double sp = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    require(p[i] >= 0.0 && q[i] >= 0.0, "js_divergence: negative mass");
    sp += p[i];
    sq += q[i];
  }
  require(std::abs(sp - 1.0) <= 1e-9 && std::abs(sq - 1.0) <= 1e-9, "js_divergence: distributions must sum to 1");
  double js = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) js += 0.5 * p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) js += 0.5 * q[i] * std::log(q[i] / m);
  }
  return std::max(js, 0.0);  // clamp tiny negative rounding
}

/// Average per-dimension JS between two row sets, after discretizing each
/// dimension into equal-width bins over the pooled min/max range. A dimension
/// that is constant across both sets contributes 0.
inline double binned_js(const std::vector<std::vector<double>>& rows_a, const std::vector<std::vector<double>>& rows_b,
                        int bins) {
  require(bins >= 1, "binned_js: bins must be >= 1");
  require(!rows_a.empty() && !rows_b.empty(), "binned_js: empty row set");
  const std::size_t dim = rows_a.front().size();
  for (const auto& r : rows_a) require(r.size() == dim, "binned_js: ragged rows");
  for (const auto& r : rows_b) require(r.size() == dim, "binned_js: ragged rows");
  require(dim > 0, "binned_js: zero-dimensional rows");

  double total = 0.0;
  for (std::size_t d = 0; d < dim; ++d) {
    double lo = rows_a.front()[d], hi = lo;
    for (const auto& r : rows_a) lo = std::min(lo, r[d]), hi = std::max(hi, r[d]);
    for (const auto& r : rows_b) lo = std::min(lo, r[d]), hi = std::max(hi, r[d]);
    if (hi <= lo) continue;  // constant dimension: identical point masses
    const auto histogram = [&](const std::vector<std::vector<double>>& rows) {
      std::vector<double> h(static_cast<std::size_t>(bins), 0.0);
      for (const auto& r : rows) {
        int b = static_cast<int>(static_cast<double>(bins) * (r[d] - lo) / (hi - lo));
        b = std::clamp(b, 0, bins - 1);
        h[static_cast<std::size_t>(b)] += 1.0;
      }
      for (double& x : h) x /= static_cast<double>(rows.size());
      return h;
    };
    total += js_divergence(histogram(rows_a), histogram(rows_b));
  }
  return total / static_cast<double>(dim);
}

/// Deterministic structural summary of one graph: node count, edge count,
/// fraction of nodes at each clamped degree 0..5, and the mean node feature
/// per dimension.
inline std::vector<double> graph_descriptor(const Graph& g) {
  std::vector<double> d;
  d.push_back(static_cast<double>(g.node_count));
  d.push_back(static_cast<double>(g.edge_count()));
  std::vector<int> degree(static_cast<std::size_t>(g.node_count), 0);
  for (const auto& [u, v] : g.edges) {
    ++degree[static_cast<std::size_t>(u)];
    ++degree[static_cast<std::size_t>(v)];
  }
  for (int bin = 0; bin <= 5; ++bin) {
    long n = 0;
    for (int deg : degree) n += std::min(deg, 5) == bin ? 1 : 0;
    d.push_back(static_cast<double>(n) / static_cast<double>(g.node_count));
  }
  for (int k = 0; k < g.feature_dim(); ++k) {
    double mean = 0.0;
    for (int v = 0; v < g.node_count; ++v) mean += g.node_features.at(v, k);
    d.push_back(mean / static_cast<double>(g.node_count));
  }
  return d;
}

struct DistanceReport {
  double raw = 0.0;     // average per-dimension JS over descriptor histograms
  double scaled = 0.0;  // raw / 1e3, the headline-table convention
};

inline DistanceReport distribution_distance(const std::vector<Graph>& corpus_a, const std::vector<Graph>& corpus_b,
                                            int bins = 16) {
  require(!corpus_a.empty() && !corpus_b.empty(), "distribution_distance: empty corpus");
  std::vector<std::vector<double>> rows_a, rows_b;
  rows_a.reserve(corpus_a.size());
  rows_b.reserve(corpus_b.size());
  for (const Graph& g : corpus_a) rows_a.push_back(graph_descriptor(g));
  for (const Graph& g : corpus_b) rows_b.push_back(graph_descriptor(g));
  DistanceReport rep;
  rep.raw = binned_js(rows_a, rows_b, bins);
  rep.scaled = rep.raw / 1e3;
  return rep;
}

struct MeanShiftResult {
  int count = 0;
  std::vector<int> assignments;  // cluster id per input row, in [0, count)
  double bandwidth_used = 0.0;
};

/// Flat-kernel mean shift: every point hill-climbs to the mean of its
/// bandwidth neighborhood until it moves less than 1e-4 (at most 300 steps);
/// converged modes closer than bandwidth/2 are merged into one category.
/// Bandwidth nullopt = auto: the 0.3-quantile of pairwise distances over an
/// evenly strided subsample of at most 500 points (floored at 1e-12 so a
/// degenerate cloud still collapses to a single category).
inline MeanShiftResult mean_shift_count(const Tensor& embeddings, std::optional<double> bandwidth = std::nullopt) {
  const int n = embeddings.rows, d = embeddings.cols;
  require(n >= 1 && d >= 1, "mean_shift_count: need at least one point and one dimension");

  const auto dist = [&](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (int k = 0; k < d; ++k) s += (a[static_cast<std::size_t>(k)] - b[static_cast<std::size_t>(k)]) *
                                     (a[static_cast<std::size_t>(k)] - b[static_cast<std::size_t>(k)]);
    return std::sqrt(s);
  };
  std::vector<std::vector<double>> pts(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(d)));
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < d; ++k) pts[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] = embeddings.at(i, k);

  double bw;
  if (bandwidth.has_value()) {
    require(*bandwidth > 0.0, "mean_shift_count: bandwidth must be positive");
    bw = *bandwidth;
  } else {
    const int stride = std::max(1, (n + 499) / 500);
    std::vector<int> sub;
    for (int i = 0; i < n; i += stride) sub.push_back(i);
    std::vector<double> dists;
    for (std::size_t i = 0; i < sub.size(); ++i)
      for (std::size_t j = i + 1; j < sub.size(); ++j)
        dists.push_back(dist(pts[static_cast<std::size_t>(sub[i])], pts[static_cast<std::size_t>(sub[j])]));
    if (dists.empty()) {
      bw = 1e-12;
    } else {
      std::sort(dists.begin(), dists.end());
      bw = std::max(dists[static_cast<std::size_t>(0.3 * static_cast<double>(dists.size() - 1))], 1e-12);
    }
  }

  std::vector<std::vector<double>> modes;
  modes.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::vector<double> cur = pts[static_cast<std::size_t>(i)];
    for (int iter = 0; iter < 300; ++iter) {
      std::vector<double> next(static_cast<std::size_t>(d), 0.0);
      long in_window = 0;
      for (int j = 0; j < n; ++j) {
        if (dist(cur, pts[static_cast<std::size_t>(j)]) > bw) continue;
        ++in_window;
        for (int k = 0; k < d; ++k) next[static_cast<std::size_t>(k)] += pts[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
      }
      for (int k = 0; k < d; ++k) next[static_cast<std::size_t>(k)] /= static_cast<double>(in_window);  // >= 1: self
      const double moved = dist(cur, next);
      cur = std::move(next);
      if (moved < 1e-4) break;
    }
    modes.push_back(std::move(cur));
  }

  MeanShiftResult res;
  res.bandwidth_used = bw;
  res.assignments.assign(static_cast<std::size_t>(n), -1);
  std::vector<std::vector<double>> reps;
  for (int i = 0; i < n; ++i) {
    int found = -1;
    for (std::size_t c = 0; c < reps.size(); ++c) {
      if (dist(modes[static_cast<std::size_t>(i)], reps[c]) < 0.5 * bw) {
        found = static_cast<int>(c);
        break;
      }
    }
    if (found < 0) {
      found = static_cast<int>(reps.size());
      reps.push_back(modes[static_cast<std::size_t>(i)]);
    }
    res.assignments[static_cast<std::size_t>(i)] = found;
  }
  res.count = static_cast<int>(reps.size());
  return res;
}

}  // namespace grbe
