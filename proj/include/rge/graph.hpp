#pragma once

// Output graphs over the k microlabel nodes: random maximum-weight spanning
// trees, BFS diameter and consensus union of edge sets.

#include <algorithm>
#include <compare>
#include <numeric>
#include <optional>
#include <queue>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rge/random.hpp"

namespace rge {

struct Edge {
  int a = 0;  // smaller endpoint
  int b = 0;  // larger endpoint

  auto operator<=>(const Edge&) const = default;
};

struct Neighbor {
  int node;
  int edge;  // index into OutputGraph::edges()
};

class DisjointSets {
 public:
  explicit DisjointSets(int n) : parent_(static_cast<std::size_t>(n)) {
    std::iota(parent_.begin(), parent_.end(), 0);
  }

  int find(int x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  // Returns false if a and b were already joined.
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent_[std::max(a, b)] = std::min(a, b);
    return true;
  }

 private:
  std::vector<int> parent_;
};

// Undirected simple graph on nodes 0..k-1. Edges are stored canonically
// (a < b) and sorted lexicographically, so edge indices are a pure function of
// the edge set.
class OutputGraph {
 public:
  OutputGraph() : OutputGraph(1, {}) {}

  OutputGraph(int k, std::vector<Edge> edges) : k_(k), edges_(std::move(edges)) {
    if (k_ < 1) throw std::invalid_argument("output graph needs at least one node");
    for (auto& e : edges_) {
      if (e.a > e.b) std::swap(e.a, e.b);
      if (e.a < 0 || e.b >= k_) {
        throw std::invalid_argument("edge (" + std::to_string(e.a) + "," + std::to_string(e.b) +
                                    ") out of range for k=" + std::to_string(k_));
      }
      if (e.a == e.b) throw std::invalid_argument("self-loop on node " + std::to_string(e.a));
    }
    std::sort(edges_.begin(), edges_.end());
    if (std::adjacent_find(edges_.begin(), edges_.end()) != edges_.end()) {
      throw std::invalid_argument("duplicate edge in output graph");
    }

    adjacency_.assign(static_cast<std::size_t>(k_), {});
    for (int e = 0; e < num_edges(); ++e) {
      adjacency_[edges_[e].a].push_back({edges_[e].b, e});
      adjacency_[edges_[e].b].push_back({edges_[e].a, e});
    }

    DisjointSets sets(k_);
    bool acyclic = true;
    int components = k_;
    for (const auto& e : edges_) {
      if (sets.unite(e.a, e.b)) {
        --components;
      } else {
        acyclic = false;
      }
    }
    connected_ = components == 1;
    is_tree_ = acyclic && connected_;
    if (connected_) diameter_ = compute_diameter();
  }

  int num_nodes() const { return k_; }
  int num_edges() const { return static_cast<int>(edges_.size()); }
  const std::vector<Edge>& edges() const { return edges_; }
  const Edge& edge(int e) const { return edges_[e]; }
  std::span<const Neighbor> neighbors(int node) const { return adjacency_[node]; }
  bool is_tree() const { return is_tree_; }
  bool is_connected() const { return connected_; }

  // Longest shortest path in edge hops.
  int diameter() const {
    if (!diameter_) {
      throw std::invalid_argument("diameter undefined: node " + std::to_string(first_unreached()) +
                                  " is disconnected from node 0");
    }
    return *diameter_;
  }

  std::optional<int> find_edge(int a, int b) const {
    const Edge key{std::min(a, b), std::max(a, b)};
    auto it = std::lower_bound(edges_.begin(), edges_.end(), key);
    if (it == edges_.end() || *it != key) return std::nullopt;
    return static_cast<int>(it - edges_.begin());
  }

  bool operator==(const OutputGraph& other) const {
    return k_ == other.k_ && edges_ == other.edges_;
  }

  // Hop distances from `source`; -1 for unreachable nodes.
  std::vector<int> bfs_distances(int source) const {
    std::vector<int> dist(static_cast<std::size_t>(k_), -1);
    std::queue<int> frontier;
    dist[source] = 0;
    frontier.push(source);
    while (!frontier.empty()) {
      const int u = frontier.front();
      frontier.pop();
      for (const auto& nb : adjacency_[u]) {
        if (dist[nb.node] < 0) {
          dist[nb.node] = dist[u] + 1;
          frontier.push(nb.node);
        }
      }
    }
    return dist;
  }

 private:
  int compute_diameter() const {
    int best = 0;
    for (int s = 0; s < k_; ++s) {
      const auto dist = bfs_distances(s);
      best = std::max(best, *std::max_element(dist.begin(), dist.end()));
    }
    return best;
  }

  int first_unreached() const {
    const auto dist = bfs_distances(0);
    return static_cast<int>(std::find(dist.begin(), dist.end(), -1) - dist.begin());
  }

  int k_;
  std::vector<Edge> edges_;
  std::vector<std::vector<Neighbor>> adjacency_;
  bool connected_ = false;
  bool is_tree_ = false;
  std::optional<int> diameter_;
};

inline int graph_diameter(const OutputGraph& g) { return g.diameter(); }

// Kruskal on a symmetric weight matrix (upper triangle is read). Equal weights
// are resolved in lexicographic edge order.
inline OutputGraph max_weight_spanning_tree(const Eigen::MatrixXd& weights) {
  const int k = static_cast<int>(weights.rows());
  if (k < 1 || weights.cols() != weights.rows()) {
    throw std::invalid_argument("weight matrix must be square with k >= 1");
  }
  std::vector<Edge> candidates;
  candidates.reserve(static_cast<std::size_t>(k) * (k - 1) / 2);
  for (int a = 0; a < k; ++a) {
    for (int b = a + 1; b < k; ++b) candidates.push_back({a, b});
  }
  std::stable_sort(candidates.begin(), candidates.end(), [&](const Edge& x, const Edge& y) {
    return weights(x.a, x.b) > weights(y.a, y.b);
  });

  DisjointSets sets(k);
  std::vector<Edge> tree;
  tree.reserve(static_cast<std::size_t>(k - 1));
  for (const auto& e : candidates) {
    if (sets.unite(e.a, e.b)) {
      tree.push_back(e);
      if (static_cast<int>(tree.size()) == k - 1) break;
    }
  }
  return OutputGraph(k, std::move(tree));
}

// Draws i.i.d. uniform [0,1) weights for every node pair and returns the
// maximum-weight spanning tree.
inline OutputGraph random_spanning_tree(int k, Rng& rng) {
  if (k < 1) throw std::invalid_argument("random_spanning_tree: k must be >= 1");
  Eigen::MatrixXd weights = Eigen::MatrixXd::Zero(k, k);
  for (int a = 0; a < k; ++a) {
    for (int b = a + 1; b < k; ++b) {
      weights(a, b) = weights(b, a) = rng.uniform();
    }
  }
  return max_weight_spanning_tree(weights);
}

// Deduplicated union of edge sets over graphs sharing the same node count.
inline OutputGraph consensus_union(std::span<const OutputGraph> graphs) {
  if (graphs.empty()) throw std::invalid_argument("consensus_union: empty graph list");
  const int k = graphs.front().num_nodes();
  std::vector<Edge> pooled;
  for (const auto& g : graphs) {
    if (g.num_nodes() != k) {
      throw std::invalid_argument("consensus_union: mismatched node counts " + std::to_string(k) +
                                  " and " + std::to_string(g.num_nodes()));
    }
    pooled.insert(pooled.end(), g.edges().begin(), g.edges().end());
  }
  std::sort(pooled.begin(), pooled.end());
  pooled.erase(std::unique(pooled.begin(), pooled.end()), pooled.end());
  return OutputGraph(k, std::move(pooled));
}

}  // namespace rge
