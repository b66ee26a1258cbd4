#pragma once

// Graph-labeling base learner: conditional-gradient (Frank-Wolfe) ascent on
// the factorized dual QP over the marginal polytope, one training example
// block at a time.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rge/error.hpp"
#include "rge/graph.hpp"
#include "rge/inference.hpp"
#include "rge/kernel.hpp"

namespace rge {

using LabelMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Dense (example, edge, edge label) tensor. Every edge reserves `stride`
// slots; slots beyond the edge's label count stay zero.
class EdgeTensor {
 public:
  EdgeTensor() = default;
  EdgeTensor(int examples, const OutputGraph& g, const LabelSpace& space)
      : examples_(examples), edges_(g.num_edges()), stride_(space.max_edge_size(g)) {
    edge_sizes_.reserve(static_cast<std::size_t>(edges_));
    for (const auto& e : g.edges()) edge_sizes_.push_back(space.edge_size(e));
    values_.assign(static_cast<std::size_t>(examples_) * block_size(), 0.0);
  }

  int num_examples() const { return examples_; }
  int num_edges() const { return edges_; }
  int stride() const { return stride_; }
  int edge_size(int e) const { return edge_sizes_[e]; }
  std::size_t block_size() const { return static_cast<std::size_t>(edges_) * stride_; }

  double& operator()(int i, int e, int u) { return values_[index(i, e, u)]; }
  double operator()(int i, int e, int u) const { return values_[index(i, e, u)]; }

  std::span<double> block(int i) { return {values_.data() + i * block_size(), block_size()}; }
  std::span<const double> block(int i) const { return {values_.data() + i * block_size(), block_size()}; }
  std::span<const double> values() const { return values_; }

  double edge_mass(int i, int e) const {
    double s = 0.0;
    for (int u = 0; u < edge_sizes_[e]; ++u) s += (*this)(i, e, u);
    return s;
  }

  // Per-example mass A_i, read from the first edge.
  double mass(int i) const { return edges_ == 0 ? 0.0 : edge_mass(i, 0); }

  bool operator==(const EdgeTensor&) const = default;

 private:
  std::size_t index(int i, int e, int u) const {
    return static_cast<std::size_t>(i) * block_size() + static_cast<std::size_t>(e) * stride_ + u;
  }

  int examples_ = 0;
  int edges_ = 0;
  int stride_ = 1;
  std::vector<int> edge_sizes_;
  std::vector<double> values_;
};

using MarginalDuals = EdgeTensor;

// One example's slice of an EdgeTensor, laid out the same way.
using Block = std::vector<double>;

// y_ie: edge label index of every training example on every edge.
inline LabelMatrix training_edge_labels(const LabelMatrix& labels, const OutputGraph& g, const LabelSpace& space) {
  if (labels.cols() != g.num_nodes()) {
    throw std::invalid_argument("label matrix has " + std::to_string(labels.cols()) + " columns, graph has " +
                                std::to_string(g.num_nodes()) + " nodes");
  }
  LabelMatrix out(labels.rows(), g.num_edges());
  for (Eigen::Index i = 0; i < labels.rows(); ++i) {
    for (int e = 0; e < g.num_edges(); ++e) {
      const Edge& edge = g.edge(e);
      out(i, e) = space.edge_label(edge, labels(i, edge.a), labels(i, edge.b));
    }
  }
  return out;
}

// l(i,e,u) = [y_ie != u].
inline EdgeTensor edge_loss_vector(const LabelMatrix& labels, const OutputGraph& g, const LabelSpace& space) {
  const LabelMatrix y = training_edge_labels(labels, g, space);
  EdgeTensor loss(static_cast<int>(labels.rows()), g, space);
  for (int i = 0; i < loss.num_examples(); ++i) {
    for (int e = 0; e < g.num_edges(); ++e) {
      for (int u = 0; u < loss.edge_size(e); ++u) loss(i, e, u) = u == y(i, e) ? 0.0 : 1.0;
    }
  }
  return loss;
}

// Node marginal mu_j(i, .) obtained by summing edge `e` (incident to `node`)
// over the other endpoint.
inline std::vector<double> node_marginal(const MarginalDuals& mu, const OutputGraph& g, const LabelSpace& space,
                                         int i, int e, int node) {
  const Edge& edge = g.edge(e);
  std::vector<double> out(static_cast<std::size_t>(space.size(node)), 0.0);
  for (int u = 0; u < space.edge_size(edge); ++u) {
    const int label = edge.a == node ? space.head_label(edge, u) : space.tail_label(edge, u);
    out[label] += mu(i, e, u);
  }
  return out;
}

struct FeasibilityReport {
  double negativity = 0.0;   // max(-mu)
  double mass = 0.0;         // per-edge mass spread or excess over C
  double consistency = 0.0;  // node-marginal disagreement between incident edges

  bool feasible(double tol = 1e-9) const { return negativity <= tol && mass <= tol && consistency <= tol; }
};

inline FeasibilityReport feasibility_report(const MarginalDuals& mu, double C, const OutputGraph& g,
                                            const LabelSpace& space) {
  FeasibilityReport r;
  for (double v : mu.values()) r.negativity = std::max(r.negativity, -v);
  for (int i = 0; i < mu.num_examples(); ++i) {
    double lo = 0.0, hi = 0.0;
    for (int e = 0; e < g.num_edges(); ++e) {
      const double a = mu.edge_mass(i, e);
      lo = e == 0 ? a : std::min(lo, a);
      hi = e == 0 ? a : std::max(hi, a);
    }
    r.mass = std::max({r.mass, hi - lo, hi - C});
    for (int j = 0; j < g.num_nodes(); ++j) {
      const auto incident = g.neighbors(j);
      if (incident.size() < 2) continue;
      const auto ref = node_marginal(mu, g, space, i, incident[0].edge, j);
      for (std::size_t n = 1; n < incident.size(); ++n) {
        const auto other = node_marginal(mu, g, space, i, incident[n].edge, j);
        for (std::size_t u = 0; u < ref.size(); ++u) r.consistency = std::max(r.consistency, std::abs(ref[u] - other[u]));
      }
    }
  }
  return r;
}

// Either the origin of an example's feasible simplex or C times the edge
// indicator marginals of one multilabel.
struct Vertex {
  std::optional<Multilabel> labels;
  double scale = 0.0;

  bool is_zero() const { return !labels.has_value(); }
};

struct LineSearchResult {
  double step = 0.0;         // tau in [0, 1]
  double slope = 0.0;        // <g_i, d>
  double curvature = 0.0;    // d' K_M d
  double improvement = 0.0;  // objective increase
};

// Dual coefficients v_ie = A_i e_{y_ie} - mu_ie packed as rows of an
// (m x edges*stride) matrix; edge potentials of an input x are k(x, .) * V.
inline Eigen::MatrixXd dual_coefficients(const MarginalDuals& mu, const LabelMatrix& edge_labels) {
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(mu.num_examples(), static_cast<Eigen::Index>(mu.block_size()));
  for (int i = 0; i < mu.num_examples(); ++i) {
    for (int e = 0; e < mu.num_edges(); ++e) {
      const double a = mu.edge_mass(i, e);
      for (int u = 0; u < mu.edge_size(e); ++u) v(i, e * mu.stride() + u) = -mu(i, e, u);
      v(i, e * mu.stride() + edge_labels(i, e)) += a;
    }
  }
  return v;
}

// Unpacks one row of k(x, .) * V into per-edge tables.
inline EdgePotentials unpack_potentials(const Eigen::Ref<const Eigen::RowVectorXd>& packed, const OutputGraph& g,
                                        const LabelSpace& space) {
  EdgePotentials p;
  const int stride = space.max_edge_size(g);
  for (int e = 0; e < g.num_edges(); ++e) {
    auto& t = p.tables.emplace_back(static_cast<std::size_t>(space.edge_size(g.edge(e))));
    for (std::size_t u = 0; u < t.size(); ++u) t[u] = packed(e * stride + static_cast<Eigen::Index>(u));
  }
  return p;
}

// The factorized dual QP of one output graph: objective mu'l - 1/2 mu' K_M mu
// with K_M block diagonal over edges.
class DualProblem {
 public:
  DualProblem(const Eigen::MatrixXd& kernel, const LabelMatrix& labels, OutputGraph g, LabelSpace space, double C)
      : kernel_(kernel), graph_(std::move(g)), space_(std::move(space)), C_(C) {
    if (!(C_ > 0.0)) throw std::invalid_argument("slack parameter C must be positive");
    if (kernel_.rows() != labels.rows() || kernel_.cols() != labels.rows()) {
      throw std::invalid_argument("kernel is " + std::to_string(kernel_.rows()) + "x" + std::to_string(kernel_.cols()) +
                                  " but there are " + std::to_string(labels.rows()) + " training examples");
    }
    edge_labels_ = training_edge_labels(labels, graph_, space_);
  }

  const OutputGraph& graph() const { return graph_; }
  const LabelSpace& space() const { return space_; }
  const LabelMatrix& edge_labels() const { return edge_labels_; }
  double C() const { return C_; }
  int num_examples() const { return static_cast<int>(kernel_.rows()); }

  MarginalDuals zeros() const { return MarginalDuals(num_examples(), graph_, space_); }

  double loss(int i, int e, int u) const { return u == edge_labels_(i, e) ? 0.0 : 1.0; }

  // Edge masses are taken per edge, so the value is the plain quadratic form
  // even at points outside the polytope.
  double objective(const MarginalDuals& mu) const {
    const Eigen::MatrixXd v = dual_coefficients(mu, edge_labels_);
    double linear = 0.0;
    for (int i = 0; i < mu.num_examples(); ++i) {
      for (int e = 0; e < mu.num_edges(); ++e) {
        for (int u = 0; u < mu.edge_size(e); ++u) linear += mu(i, e, u) * loss(i, e, u);
      }
    }
    const double quadratic = (v.transpose() * kernel_ * v).trace();
    return linear - 0.5 * quadratic;
  }

  // g_i(e,u) = l(i,e,u) - sum_j sum_u' K_e(x_i,u; x_j,u') mu(j,e,u').
  Block gradient_block(const MarginalDuals& mu, int i) const {
    const Eigen::MatrixXd v = dual_coefficients(mu, edge_labels_);
    const Eigen::RowVectorXd scores = kernel_.row(i) * v;
    return gradient_from_scores(scores, i);
  }

  // Gradient block given psi_e(x_i, .) for all edges, packed like a Block.
  Block gradient_from_scores(const Eigen::Ref<const Eigen::RowVectorXd>& scores, int i) const {
    const int stride = space_.max_edge_size(graph_);
    Block g(static_cast<std::size_t>(graph_.num_edges() * stride), 0.0);
    for (int e = 0; e < graph_.num_edges(); ++e) {
      const double at_truth = scores(e * stride + edge_labels_(i, e));
      for (int u = 0; u < space_.edge_size(graph_.edge(e)); ++u) {
        g[e * stride + u] = loss(i, e, u) - at_truth + scores(e * stride + u);
      }
    }
    return g;
  }

  // Maximizer of <g_i, v> over the example's feasible simplex, found by MAP
  // inference with the gradient as edge potentials.
  Vertex steepest_feasible_vertex(const Block& grad) const {
    const int stride = space_.max_edge_size(graph_);
    EdgePotentials pot;
    for (int e = 0; e < graph_.num_edges(); ++e) {
      const int n = space_.edge_size(graph_.edge(e));
      pot.tables.emplace_back(grad.begin() + e * stride, grad.begin() + e * stride + n);
    }
    auto best = map_decode(pot, graph_, space_);
    if (best.score > 0.0) return Vertex{std::move(best.labels), C_};
    return Vertex{std::nullopt, C_};
  }

  Block vertex_block(const Vertex& vertex) const {
    const int stride = space_.max_edge_size(graph_);
    Block b(static_cast<std::size_t>(graph_.num_edges() * stride), 0.0);
    if (vertex.is_zero()) return b;
    const auto& y = *vertex.labels;
    for (int e = 0; e < graph_.num_edges(); ++e) {
      const Edge& edge = graph_.edge(e);
      b[e * stride + space_.edge_label(edge, y[edge.a], y[edge.b])] = vertex.scale;
    }
    return b;
  }

  // Exact line search along d = vertex - mu_i.
  LineSearchResult line_search(std::span<const double> mu_i, const Block& grad, const Block& target, int i) const {
    const int stride = space_.max_edge_size(graph_);
    LineSearchResult r;
    double norm = 0.0;
    for (int e = 0; e < graph_.num_edges(); ++e) {
      const int n = space_.edge_size(graph_.edge(e));
      double dmass = 0.0;
      for (int u = 0; u < n; ++u) {
        const double d = target[e * stride + u] - mu_i[e * stride + u];
        r.slope += grad[e * stride + u] * d;
        dmass += d;
      }
      for (int u = 0; u < n; ++u) {
        const double d = target[e * stride + u] - mu_i[e * stride + u];
        const double dv = (u == edge_labels_(i, e) ? dmass : 0.0) - d;
        norm += dv * dv;
      }
    }
    r.curvature = kernel_(i, i) * norm;
    if (r.slope <= 0.0) return r;
    r.step = r.curvature > 0.0 ? std::min(1.0, r.slope / r.curvature) : 1.0;
    r.improvement = r.step * r.slope - 0.5 * r.step * r.step * r.curvature;
    return r;
  }

  // Computes the gradient from scratch and moves mu_i toward `vertex`.
  LineSearchResult line_search_update(MarginalDuals& mu, int i, const Vertex& vertex) const {
    const Block grad = gradient_block(mu, i);
    const Block target = vertex_block(vertex);
    auto block = mu.block(i);
    const auto r = line_search(block, grad, target, i);
    for (std::size_t n = 0; n < block.size(); ++n) block[n] += r.step * (target[n] - block[n]);
    return r;
  }

 private:
  const Eigen::MatrixXd& kernel_;
  OutputGraph graph_;
  LabelSpace space_;
  double C_;
  LabelMatrix edge_labels_;
};

struct StepEvent {
  int pass = 0;
  int example = 0;
  const Vertex* vertex = nullptr;
  double step = 0.0;
};

struct TrainConfig {
  double C = 1.0;
  int max_passes = 100;
  double tolerance = 1e-6;  // per-example objective improvement
  std::function<void(const StepEvent&)> on_step;  // called for every accepted step
};

struct BaseModel {
  OutputGraph graph;
  LabelSpace space;
  MarginalDuals mu;
  double C = 1.0;
  std::shared_ptr<const LabelMatrix> train_labels;
  LabelMatrix train_edge_labels;
  std::string kernel_ref;
  std::vector<double> objective_log;  // objective after each pass
  int passes = 0;

  // Packed dual coefficients (see dual_coefficients).
  Eigen::MatrixXd coefficients() const { return dual_coefficients(mu, train_edge_labels); }

  EdgePotentials potentials(const Eigen::Ref<const Eigen::RowVectorXd>& kernel_row) const {
    return unpack_potentials(kernel_row * coefficients(), graph, space);
  }
};

inline BaseModel train_base(const KernelMatrix& kernel, std::shared_ptr<const LabelMatrix> labels,
                            const LabelSpace& space, const OutputGraph& g, const TrainConfig& cfg,
                            std::string kernel_ref = {}) {
  if (!g.is_tree()) throw std::invalid_argument("base learners train on spanning trees only");
  if (!(cfg.C > 0.0)) throw std::invalid_argument("slack parameter C must be positive");
  if (cfg.tolerance < 0.0) throw std::invalid_argument("tolerance must be non-negative");
  if (!labels) throw std::invalid_argument("train_base: missing labels");

  const DualProblem problem(kernel.values, *labels, g, space, cfg.C);
  const int m = problem.num_examples();
  const int stride = space.max_edge_size(g);

  BaseModel model;
  model.graph = g;
  model.space = space;
  model.C = cfg.C;
  model.train_labels = labels;
  model.train_edge_labels = problem.edge_labels();
  model.kernel_ref = std::move(kernel_ref);
  model.mu = problem.zeros();

  // scores(j, .) = psi_e(x_j, .) = sum_i k(j, i) v_i, kept in sync with mu.
  Eigen::MatrixXd scores = Eigen::MatrixXd::Zero(m, static_cast<Eigen::Index>(model.mu.block_size()));
  Eigen::RowVectorXd delta(scores.cols());
  double objective = 0.0;

  for (int pass = 0; pass < cfg.max_passes; ++pass) {
    double largest = 0.0;
    for (int i = 0; i < m; ++i) {
      const Block grad = problem.gradient_from_scores(scores.row(i), i);
      const Vertex vertex = problem.steepest_feasible_vertex(grad);
      const Block target = problem.vertex_block(vertex);
      auto block = model.mu.block(i);
      const auto step = problem.line_search(block, grad, target, i);
      if (step.step <= 0.0) continue;

      delta.setZero();
      for (int e = 0; e < g.num_edges(); ++e) {
        double dmass = 0.0;
        for (int u = 0; u < space.edge_size(g.edge(e)); ++u) {
          const std::size_t n = static_cast<std::size_t>(e * stride + u);
          const double d = step.step * (target[n] - block[n]);
          block[n] += d;
          delta(e * stride + u) = -d;
          dmass += d;
        }
        delta(e * stride + model.train_edge_labels(i, e)) += dmass;
      }
      scores.noalias() += kernel.values.col(i) * delta;

      objective += step.improvement;
      largest = std::max(largest, step.improvement);
      if (cfg.on_step) cfg.on_step(StepEvent{pass, i, &vertex, step.step});
    }
    model.objective_log.push_back(objective);
    model.passes = pass + 1;
    if (largest < cfg.tolerance) break;
  }
  return model;
}

}  // namespace rge
