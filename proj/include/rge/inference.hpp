#pragma once

// Max-sum message passing over output graphs: MAP decoding, all-node
// max-marginals, and exhaustive enumeration used as a test oracle.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "rge/graph.hpp"
#include "rge/kernel.hpp"

namespace rge {

using Multilabel = std::vector<int>;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// psi_e(u_e) for every edge of a graph, indexed like LabelSpace::edge_label.
struct EdgePotentials {
  std::vector<std::vector<double>> tables;

  static EdgePotentials zeros(const OutputGraph& g, const LabelSpace& space) {
    EdgePotentials p;
    for (const auto& e : g.edges()) p.tables.emplace_back(static_cast<std::size_t>(space.edge_size(e)), 0.0);
    return p;
  }
};

struct Decoding {
  Multilabel labels;
  double score = 0.0;
};

// Row j holds the max-marginal of node j per label; entries u >= l_j are
// padding and hold -inf.
struct MaxMarginals {
  Eigen::MatrixXd values;
  bool exact = true;

  bool valid(int node, int label) const { return std::isfinite(values(node, label)); }
};

// Directed messages: toward[e] is the message from edge(e).a into edge(e).b,
// backward[e] the message from edge(e).b into edge(e).a.
struct Messages {
  std::vector<std::vector<double>> toward;
  std::vector<std::vector<double>> backward;
  int iterations = 0;

  bool operator==(const Messages&) const = default;
};

// Two scores closer than this are treated as tied.
inline double tie_tolerance(double best) { return 1e-9 * std::max(1.0, std::abs(best)); }

inline void validate_potentials(const EdgePotentials& pot, const OutputGraph& g, const LabelSpace& space) {
  if (space.num_nodes() != g.num_nodes()) {
    throw std::invalid_argument("label space has " + std::to_string(space.num_nodes()) + " nodes, graph has " +
                                std::to_string(g.num_nodes()));
  }
  if (static_cast<int>(pot.tables.size()) != g.num_edges()) {
    throw std::invalid_argument("potentials cover " + std::to_string(pot.tables.size()) + " edges, graph has " +
                                std::to_string(g.num_edges()));
  }
  for (int e = 0; e < g.num_edges(); ++e) {
    if (static_cast<int>(pot.tables[e].size()) != space.edge_size(g.edge(e))) {
      throw std::invalid_argument("potential table of edge " + std::to_string(e) + " has wrong size");
    }
  }
}

inline double multilabel_score(const EdgePotentials& pot, const OutputGraph& g, const LabelSpace& space,
                               std::span<const int> y) {
  double total = 0.0;
  for (int e = 0; e < g.num_edges(); ++e) {
    const auto& edge = g.edge(e);
    total += pot.tables[e][space.edge_label(edge, y[edge.a], y[edge.b])];
  }
  return total;
}

namespace detail {

using Unary = std::vector<std::vector<double>>;  // empty means all zero

inline const std::vector<double>& message_into(const Messages& msgs, const OutputGraph& g, int edge, int node) {
  return g.edge(edge).b == node ? msgs.toward[edge] : msgs.backward[edge];
}

// Message from `from` across `edge`, computed from the messages currently in
// `msgs`.
inline std::vector<double> compute_message(const EdgePotentials& pot, const OutputGraph& g, const LabelSpace& space,
                                           const Unary& unary, const Messages& msgs, int edge, int from) {
  const Edge& e = g.edge(edge);
  const int to = e.a == from ? e.b : e.a;
  std::vector<double> gathered(static_cast<std::size_t>(space.size(from)), 0.0);
  if (!unary.empty()) gathered = unary[from];
  for (const auto& nb : g.neighbors(from)) {
    if (nb.edge == edge) continue;
    const auto& in = message_into(msgs, g, nb.edge, from);
    for (int u = 0; u < space.size(from); ++u) gathered[u] += in[u];
  }
  std::vector<double> out(static_cast<std::size_t>(space.size(to)), kNegInf);
  const auto& table = pot.tables[edge];
  for (int uf = 0; uf < space.size(from); ++uf) {
    for (int ut = 0; ut < space.size(to); ++ut) {
      const int label = e.a == from ? space.edge_label(e, uf, ut) : space.edge_label(e, ut, uf);
      out[ut] = std::max(out[ut], gathered[uf] + table[label]);
    }
  }
  return out;
}

inline Messages zero_messages(const OutputGraph& g, const LabelSpace& space) {
  Messages msgs;
  for (const auto& e : g.edges()) {
    msgs.toward.emplace_back(static_cast<std::size_t>(space.size(e.b)), 0.0);
    msgs.backward.emplace_back(static_cast<std::size_t>(space.size(e.a)), 0.0);
  }
  return msgs;
}

inline Messages flood(const EdgePotentials& pot, const OutputGraph& g, const LabelSpace& space, int iterations,
                      const Unary& unary) {
  Messages msgs = zero_messages(g, space);
  for (int it = 0; it < iterations; ++it) {
    Messages next = msgs;
    for (int e = 0; e < g.num_edges(); ++e) {
      next.toward[e] = compute_message(pot, g, space, unary, msgs, e, g.edge(e).a);
      next.backward[e] = compute_message(pot, g, space, unary, msgs, e, g.edge(e).b);
    }
    msgs = std::move(next);
    msgs.iterations = it + 1;
  }
  return msgs;
}

// Exact fixed-point messages on a tree via one upward and one downward sweep.
inline Messages tree_sweep(const EdgePotentials& pot, const OutputGraph& g, const LabelSpace& space,
                           const Unary& unary) {
  Messages msgs = zero_messages(g, space);
  const int k = g.num_nodes();
  std::vector<int> order;
  std::vector<int> parent_edge(static_cast<std::size_t>(k), -1);
  std::vector<char> seen(static_cast<std::size_t>(k), 0);
  order.reserve(static_cast<std::size_t>(k));
  order.push_back(0);
  seen[0] = 1;
  for (std::size_t head = 0; head < order.size(); ++head) {
    const int u = order[head];
    for (const auto& nb : g.neighbors(u)) {
      if (!seen[nb.node]) {
        seen[nb.node] = 1;
        parent_edge[nb.node] = nb.edge;
        order.push_back(nb.node);
      }
    }
  }
  auto store = [&](int edge, int from, std::vector<double> m) {
    if (g.edge(edge).a == from) {
      msgs.toward[edge] = std::move(m);
    } else {
      msgs.backward[edge] = std::move(m);
    }
  };
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const int node = *it;
    if (parent_edge[node] >= 0) store(parent_edge[node], node, compute_message(pot, g, space, unary, msgs, parent_edge[node], node));
  }
  for (const int node : order) {
    for (const auto& nb : g.neighbors(node)) {
      if (nb.edge == parent_edge[node]) continue;
      store(nb.edge, node, compute_message(pot, g, space, unary, msgs, nb.edge, node));
    }
  }
  msgs.iterations = g.num_edges() == 0 ? 0 : g.diameter();
  return msgs;
}

inline Eigen::MatrixXd beliefs(const Messages& msgs, const OutputGraph& g, const LabelSpace& space,
                               const Unary& unary) {
  Eigen::MatrixXd b = Eigen::MatrixXd::Constant(g.num_nodes(), space.max_size(), kNegInf);
  for (int j = 0; j < g.num_nodes(); ++j) {
    for (int u = 0; u < space.size(j); ++u) b(j, u) = unary.empty() ? 0.0 : unary[j][u];
    for (const auto& nb : g.neighbors(j)) {
      const auto& in = message_into(msgs, g, nb.edge, j);
      for (int u = 0; u < space.size(j); ++u) b(j, u) += in[u];
    }
  }
  return b;
}

// Smallest label whose value reaches `threshold`.
inline int first_reaching(const Eigen::MatrixXd& b, int node, int size, double threshold) {
  for (int u = 0; u < size; ++u) {
    if (b(node, u) >= threshold) return u;
  }
  return 0;
}

// Lexicographically smallest maximizer on a tree by clamping nodes in order.
inline Multilabel clamped_tree_decode(const EdgePotentials& pot, const OutputGraph& g, const LabelSpace& space,
                                      double map_value) {
  const double threshold = map_value - tie_tolerance(map_value);
  Unary unary(static_cast<std::size_t>(g.num_nodes()));
  for (int j = 0; j < g.num_nodes(); ++j) unary[j].assign(static_cast<std::size_t>(space.size(j)), 0.0);
  Multilabel y(static_cast<std::size_t>(g.num_nodes()), 0);
  for (int j = 0; j < g.num_nodes(); ++j) {
    const auto b = beliefs(tree_sweep(pot, g, space, unary), g, space, unary);
    y[j] = first_reaching(b, j, space.size(j), threshold);
    for (int u = 0; u < space.size(j); ++u) {
      if (u != y[j]) unary[j][u] = kNegInf;
    }
  }
  return y;
}

}  // namespace detail

// Synchronous max-sum flooding for a fixed number of iterations.
inline Messages max_sum_messages(const EdgePotentials& pot, const OutputGraph& g, const LabelSpace& space,
                                 int iterations) {
  validate_potentials(pot, g, space);
  return detail::flood(pot, g, space, iterations, {});
}

// argmax_y sum_e psi_e(y_e) with ties resolved toward the lexicographically
// smallest multilabel. Messages are flooded for diameter(g) iterations; on
// trees the result is exact, on loopy graphs node beliefs are decoded as is.
inline Decoding map_decode(const EdgePotentials& pot, const OutputGraph& g, const LabelSpace& space) {
  validate_potentials(pot, g, space);
  const int iterations = g.diameter();
  const auto msgs = detail::flood(pot, g, space, iterations, {});
  const auto b = detail::beliefs(msgs, g, space, {});

  Decoding out;
  out.labels.assign(static_cast<std::size_t>(g.num_nodes()), 0);
  bool tied = false;
  for (int j = 0; j < g.num_nodes(); ++j) {
    const double best = b.row(j).head(space.size(j)).maxCoeff();
    const double threshold = best - tie_tolerance(best);
    out.labels[j] = detail::first_reaching(b, j, space.size(j), threshold);
    for (int u = out.labels[j] + 1; u < space.size(j); ++u) tied = tied || b(j, u) >= threshold;
  }
  if (tied && g.is_tree()) {
    const double map_value = b.row(0).head(space.size(0)).maxCoeff();
    out.labels = detail::clamped_tree_decode(pot, g, space, map_value);
  }
  out.score = multilabel_score(pot, g, space, out.labels);
  return out;
}

// Max-marginals for every (node, label). Exact on trees (two-pass sweep);
// on loopy graphs the diameter-limited flooding beliefs are returned and the
// result is flagged approximate.
inline MaxMarginals max_marginals(const EdgePotentials& pot, const OutputGraph& g, const LabelSpace& space) {
  validate_potentials(pot, g, space);
  MaxMarginals out;
  if (g.is_tree()) {
    out.values = detail::beliefs(detail::tree_sweep(pot, g, space, {}), g, space, {});
    out.exact = true;
  } else {
    out.values = detail::beliefs(detail::flood(pot, g, space, g.diameter(), {}), g, space, {});
    out.exact = false;
  }
  return out;
}

inline constexpr double kBruteForceLimit = 1 << 20;

namespace detail {

template <typename Visit>
void enumerate_multilabels(const LabelSpace& space, Visit&& visit) {
  double total = 1.0;
  for (int s : space.sizes()) total *= s;
  if (total > kBruteForceLimit) {
    throw std::invalid_argument("brute force refused: label space of size " + std::to_string(total) +
                                " exceeds 2^20");
  }
  const int k = space.num_nodes();
  Multilabel y(static_cast<std::size_t>(k), 0);
  while (true) {
    visit(std::as_const(y));
    int pos = k - 1;
    while (pos >= 0 && ++y[pos] == space.size(pos)) y[pos--] = 0;
    if (pos < 0) break;
  }
}

}  // namespace detail

// Exhaustive argmax over the label space, enumerated in lexicographic order.
inline Decoding brute_force_decode(const EdgePotentials& pot, const OutputGraph& g, const LabelSpace& space) {
  validate_potentials(pot, g, space);
  std::vector<Multilabel> all;
  std::vector<double> scores;
  detail::enumerate_multilabels(space, [&](const Multilabel& y) {
    all.push_back(y);
    scores.push_back(multilabel_score(pot, g, space, y));
  });
  const double best = *std::max_element(scores.begin(), scores.end());
  const double threshold = best - tie_tolerance(best);
  for (std::size_t n = 0; n < all.size(); ++n) {
    if (scores[n] >= threshold) return {all[n], scores[n]};
  }
  return {};
}

inline MaxMarginals brute_force_max_marginals(const EdgePotentials& pot, const OutputGraph& g,
                                              const LabelSpace& space) {
  validate_potentials(pot, g, space);
  MaxMarginals out;
  out.values = Eigen::MatrixXd::Constant(g.num_nodes(), space.max_size(), kNegInf);
  detail::enumerate_multilabels(space, [&](const Multilabel& y) {
    const double s = multilabel_score(pot, g, space, y);
    for (int j = 0; j < g.num_nodes(); ++j) out.values(j, y[j]) = std::max(out.values(j, y[j]), s);
  });
  return out;
}

}  // namespace rge
