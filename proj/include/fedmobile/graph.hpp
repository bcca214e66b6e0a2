#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <set>
#include <utility>
#include <vector>

#include "fedmobile/error.hpp"
#include "fedmobile/matrix.hpp"
#include "fedmobile/rng.hpp"

namespace fedmobile {

// Undirected mobility graph: one node per visited location cluster, an edge
// between clusters visited consecutively. Edges are stored as (u, v) node
// index pairs with u < v, no self loops, no duplicates.
struct TrajectoryGraph {
  std::vector<int> node_ids;                // cluster labels, ascending
  std::vector<std::pair<int, int>> edges;   // node index pairs, u < v
  DenseMatrix node_features;                // num_nodes x feature_dim

  std::size_t num_nodes() const { return node_ids.size(); }

  void validate() const {
    if (node_features.rows != node_ids.size())
      throw StateError("graph: feature rows != node count");
    std::set<std::pair<int, int>> seen;
    for (auto [u, v] : edges) {
      if (u == v) throw StateError("graph: self loop");
      if (u > v) throw StateError("graph: edge not normalized");
      if (v < 0 || static_cast<std::size_t>(v) >= node_ids.size())
        throw StateError("graph: edge endpoint out of range");
      if (!seen.insert({u, v}).second) throw StateError("graph: duplicate edge");
    }
  }

  bool operator==(const TrajectoryGraph& o) const = default;
};

// Builds the mobility graph from a sequence of visited cluster labels.
// Consecutive visits to distinct clusters become undirected edges; repeats of
// the same cluster add no edge. Node features are the normalized visit count
// followed by a one-hot encoding of the cluster label over `vocab_size`
// clusters (0 = use max label + 1).
inline TrajectoryGraph build_mobility_graph(const std::vector<int>& cluster_sequence,
                                            int vocab_size = 0) {
  if (cluster_sequence.empty())
    throw InputError("build_mobility_graph: empty cluster sequence");
  for (int c : cluster_sequence)
    if (c < 0) throw InputError("build_mobility_graph: negative cluster label");

  std::map<int, int> visit_counts;
  for (int c : cluster_sequence) visit_counts[c]++;

  TrajectoryGraph g;
  std::map<int, int> index_of;  // cluster label -> node index
  for (const auto& [label, count] : visit_counts) {
    index_of[label] = static_cast<int>(g.node_ids.size());
    g.node_ids.push_back(label);
  }

  int max_label = g.node_ids.back();
  if (vocab_size == 0) vocab_size = max_label + 1;
  if (max_label >= vocab_size)
    throw InputError("build_mobility_graph: cluster label exceeds vocab size");

  std::set<std::pair<int, int>> edge_set;
  for (std::size_t i = 1; i < cluster_sequence.size(); ++i) {
    int a = index_of[cluster_sequence[i - 1]];
    int b = index_of[cluster_sequence[i]];
    if (a == b) continue;
    edge_set.insert({std::min(a, b), std::max(a, b)});
  }
  g.edges.assign(edge_set.begin(), edge_set.end());

  const std::size_t n = g.node_ids.size();
  const double total = static_cast<double>(cluster_sequence.size());
  g.node_features = DenseMatrix(n, static_cast<std::size_t>(vocab_size) + 1);
  for (std::size_t i = 0; i < n; ++i) {
    g.node_features.at(i, 0) = visit_counts[g.node_ids[i]] / total;
    g.node_features.at(i, 1 + static_cast<std::size_t>(g.node_ids[i])) = 1.0;
  }
  return g;
}

// Each unordered node pair independently toggles its edge with probability
// flip_prob. Nodes and features are untouched.
inline TrajectoryGraph perturb_graph(const TrajectoryGraph& g, double flip_prob, Rng& rng) {
  if (flip_prob < 0.0 || flip_prob > 1.0)
    throw InputError("perturb_graph: flip_prob outside [0, 1]");
  TrajectoryGraph out = g;
  if (flip_prob == 0.0 || g.num_nodes() < 2) return out;

  std::set<std::pair<int, int>> edge_set(g.edges.begin(), g.edges.end());
  const int n = static_cast<int>(g.num_nodes());
  for (int u = 0; u < n; ++u) {
    for (int v = u + 1; v < n; ++v) {
      if (!rng.bernoulli(flip_prob)) continue;
      auto e = std::make_pair(u, v);
      if (!edge_set.erase(e)) edge_set.insert(e);
    }
  }
  out.edges.assign(edge_set.begin(), edge_set.end());
  return out;
}

// Symmetric-normalized adjacency with self loops: D^{-1/2} (A + I) D^{-1/2}.
inline DenseMatrix normalized_adjacency(const TrajectoryGraph& g) {
  const std::size_t n = g.num_nodes();
  if (n == 0) throw InputError("normalized_adjacency: empty graph");
  DenseMatrix a(n, n);
  for (std::size_t i = 0; i < n; ++i) a.at(i, i) = 1.0;
  for (auto [u, v] : g.edges) {
    a.at(static_cast<std::size_t>(u), static_cast<std::size_t>(v)) = 1.0;
    a.at(static_cast<std::size_t>(v), static_cast<std::size_t>(u)) = 1.0;
  }
  std::vector<double> inv_sqrt_deg(n);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < n; ++j) deg += a.at(i, j);
    inv_sqrt_deg[i] = 1.0 / std::sqrt(deg);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a.at(i, j) *= inv_sqrt_deg[i] * inv_sqrt_deg[j];
  return a;
}

}  // namespace fedmobile
