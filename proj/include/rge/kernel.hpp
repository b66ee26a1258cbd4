#pragma once

// Input kernels between examples, the one-hot edge-label kernel and the joint
// score kernel used to turn marginal dual variables into edge potentials.

#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "rge/error.hpp"
#include "rge/graph.hpp"

namespace rge {

enum class KernelKind { linear, quadratic, precomputed };

inline std::string_view to_string(KernelKind kind) {
  switch (kind) {
    case KernelKind::linear: return "linear";
    case KernelKind::quadratic: return "quadratic";
    case KernelKind::precomputed: return "precomputed";
  }
  return "?";
}

inline KernelKind parse_kernel_kind(std::string_view name) {
  if (name == "linear") return KernelKind::linear;
  if (name == "quadratic") return KernelKind::quadratic;
  if (name == "precomputed") return KernelKind::precomputed;
  throw ConfigError("unknown kernel kind '" + std::string(name) + "'");
}

struct KernelMatrix {
  Eigen::MatrixXd values;
  KernelKind kind = KernelKind::linear;
  bool normalized = false;

  Eigen::Index size() const { return values.rows(); }
  double operator()(Eigen::Index i, Eigen::Index j) const { return values(i, j); }
};

// Per-node alphabet sizes. Edge labels of e = (a, b) are enumerated row-major:
// index = u_a * l_b + u_b.
class LabelSpace {
 public:
  LabelSpace() = default;
  explicit LabelSpace(std::vector<int> sizes) : sizes_(std::move(sizes)) {
    for (std::size_t j = 0; j < sizes_.size(); ++j) {
      if (sizes_[j] < 2) {
        throw std::invalid_argument("node " + std::to_string(j) + " alphabet size must be >= 2");
      }
    }
  }

  static LabelSpace binary(int k) { return LabelSpace(std::vector<int>(static_cast<std::size_t>(k), 2)); }

  int num_nodes() const { return static_cast<int>(sizes_.size()); }
  int size(int node) const { return sizes_[node]; }
  const std::vector<int>& sizes() const { return sizes_; }
  int max_size() const {
    int best = 0;
    for (int s : sizes_) best = std::max(best, s);
    return best;
  }

  int edge_size(const Edge& e) const { return sizes_[e.a] * sizes_[e.b]; }
  int edge_label(const Edge& e, int ua, int ub) const { return ua * sizes_[e.b] + ub; }
  int head_label(const Edge& e, int u) const { return u / sizes_[e.b]; }  // label of e.a
  int tail_label(const Edge& e, int u) const { return u % sizes_[e.b]; }  // label of e.b

  // Largest edge label count over all node pairs in `g`.
  int max_edge_size(const OutputGraph& g) const {
    int best = 1;
    for (const auto& e : g.edges()) best = std::max(best, edge_size(e));
    return best;
  }

  bool operator==(const LabelSpace&) const = default;

 private:
  std::vector<int> sizes_;
};

// One-hot edge label embedding: inner product is the identity indicator.
inline double edge_label_kernel(int u, int v) { return u == v ? 1.0 : 0.0; }

// k(x, x_i) * (K_e(y_ie, y_e) - K_e(u_e, y_e)).
inline double joint_h(double k_x_xi, int y_ie, int u_e, int y_e) {
  return k_x_xi * (edge_label_kernel(y_ie, y_e) - edge_label_kernel(u_e, y_e));
}

// Kernel between two feature rows before normalization.
template <typename RowA, typename RowB>
double raw_kernel(KernelKind kind, const RowA& x, const RowB& z) {
  const double dot = x.dot(z);
  switch (kind) {
    case KernelKind::linear: return dot;
    case KernelKind::quadratic: return (dot + 1.0) * (dot + 1.0);
    case KernelKind::precomputed: break;
  }
  throw std::invalid_argument("raw_kernel: precomputed kernels have no feature form");
}

inline void normalize_in_place(Eigen::MatrixXd& k, const Eigen::VectorXd& row_diag,
                               const Eigen::VectorXd& col_diag) {
  for (Eigen::Index i = 0; i < row_diag.size(); ++i) {
    if (!(row_diag(i) > 0.0)) {
      throw DataError("cannot normalize kernel: example " + std::to_string(i) +
                      " has non-positive self-similarity " + std::to_string(row_diag(i)));
    }
  }
  for (Eigen::Index j = 0; j < col_diag.size(); ++j) {
    if (!(col_diag(j) > 0.0)) {
      throw DataError("cannot normalize kernel: example " + std::to_string(j) +
                      " has non-positive self-similarity " + std::to_string(col_diag(j)));
    }
  }
  const Eigen::VectorXd r = row_diag.cwiseSqrt().cwiseInverse();
  const Eigen::VectorXd c = col_diag.cwiseSqrt().cwiseInverse();
  k = r.asDiagonal() * k * c.asDiagonal();
}

// Self-kernel values k(x, x) for every row.
inline Eigen::VectorXd self_kernel(const Eigen::MatrixXd& features, KernelKind kind) {
  Eigen::VectorXd diag(features.rows());
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    diag(i) = raw_kernel(kind, features.row(i), features.row(i));
  }
  return diag;
}

// Train kernel from a feature matrix, or validation (and optional
// normalization) of a precomputed Gram matrix.
inline KernelMatrix compute_input_kernel(const Eigen::MatrixXd& data, KernelKind kind, bool normalize) {
  KernelMatrix out;
  out.kind = kind;
  out.normalized = normalize;
  if (kind == KernelKind::precomputed) {
    if (data.rows() != data.cols()) {
      throw DataError("precomputed kernel must be square, got " + std::to_string(data.rows()) + "x" +
                      std::to_string(data.cols()));
    }
    for (Eigen::Index i = 0; i < data.rows(); ++i) {
      for (Eigen::Index j = i + 1; j < data.cols(); ++j) {
        if (std::abs(data(i, j) - data(j, i)) > 1e-9) {
          throw DataError("precomputed kernel is not symmetric at (" + std::to_string(i) + "," +
                          std::to_string(j) + ")");
        }
      }
    }
    out.values = data;
  } else {
    const Eigen::MatrixXd gram = data * data.transpose();
    out.values = kind == KernelKind::linear ? gram : (gram.array() + 1.0).square().matrix();
  }
  if (normalize) {
    const Eigen::VectorXd diag = out.values.diagonal();
    normalize_in_place(out.values, diag, diag);
    out.values.diagonal().setOnes();
  }
  return out;
}

// Rows k(x_test, x_train) consistent with compute_input_kernel on the train
// features.
inline Eigen::MatrixXd cross_kernel(const Eigen::MatrixXd& test, const Eigen::MatrixXd& train, KernelKind kind,
                                    bool normalize) {
  if (kind == KernelKind::precomputed) {
    throw std::invalid_argument("cross_kernel: precomputed kernels are supplied directly");
  }
  if (test.cols() != train.cols()) {
    throw DataError("feature width mismatch: expected " + std::to_string(train.cols()) + ", got " +
                    std::to_string(test.cols()));
  }
  const Eigen::MatrixXd dots = test * train.transpose();
  Eigen::MatrixXd k = kind == KernelKind::linear ? dots : (dots.array() + 1.0).square().matrix();
  if (normalize && k.size() > 0) normalize_in_place(k, self_kernel(test, kind), self_kernel(train, kind));
  return k;
}

}  // namespace rge
