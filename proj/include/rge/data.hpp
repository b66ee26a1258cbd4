#pragma once

// Multilabel datasets: CSV ingestion, the synthetic Circle generator,
// cardinality-stratified folds and evaluation metrics.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rge/error.hpp"
#include "rge/kernel.hpp"
#include "rge/learner.hpp"
#include "rge/random.hpp"

namespace rge {

struct MultilabelDataset {
  std::string name;
  Eigen::MatrixXd inputs;  // m x d features, or m x m Gram when precomputed
  bool precomputed = false;
  LabelMatrix labels;      // m x k
  LabelSpace space;

  int num_examples() const { return static_cast<int>(labels.rows()); }
  int num_labels() const { return static_cast<int>(labels.cols()); }

  // Mean number of positive (== 1) microlabels per example.
  double cardinality() const {
    if (labels.rows() == 0) return 0.0;
    return static_cast<double>((labels.array() == 1).count()) / static_cast<double>(labels.rows());
  }
  double density() const { return labels.cols() == 0 ? 0.0 : cardinality() / static_cast<double>(labels.cols()); }
};

namespace csv {

// Headerless numeric CSV. Blank lines are skipped; every row must have the
// same width.
inline std::vector<std::vector<double>> read_rows(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) {
      const auto first = cell.find_first_not_of(" \t");
      const auto last = cell.find_last_not_of(" \t");
      const std::string trimmed = first == std::string::npos ? "" : cell.substr(first, last - first + 1);
      double value = 0.0;
      const auto [ptr, ec] = std::from_chars(trimmed.data(), trimmed.data() + trimmed.size(), value);
      if (trimmed.empty() || ec != std::errc() || ptr != trimmed.data() + trimmed.size()) {
        throw DataError(path + ":" + std::to_string(line_no) + ": non-numeric cell '" + trimmed + "'");
      }
      row.push_back(value);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw DataError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(rows.front().size()) +
                      " columns, got " + std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd read_matrix(const std::string& path) {
  const auto rows = read_rows(path);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  return out;
}

// Labels must be non-negative integers below the alphabet size (binary by
// default). Line numbers in errors are 1-based.
inline LabelMatrix read_labels(const std::string& path, int alphabet = 2) {
  const auto rows = read_rows(path);
  LabelMatrix out(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      const double v = rows[r][c];
      if (v != std::floor(v) || v < 0 || v >= alphabet) {
        throw DataError(path + ":" + std::to_string(r + 1) + ": label value " + std::to_string(v) +
                        " outside alphabet {0.." + std::to_string(alphabet - 1) + "}");
      }
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = static_cast<int>(v);
    }
  }
  return out;
}

inline std::string format_number(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <typename Matrix>
void write_matrix(const std::string& path, const Matrix& m) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) out << ',';
      if constexpr (std::is_integral_v<typename Matrix::Scalar>) {
        out << m(r, c);
      } else {
        out << format_number(m(r, c));
      }
    }
    out << '\n';
  }
}

}  // namespace csv

// Loads a features (or precomputed Gram) CSV and a labels CSV with matching
// row counts.
inline MultilabelDataset load_dataset(const std::string& inputs_path, const std::string& labels_path, KernelKind kind,
                                      std::string name = {}) {
  MultilabelDataset ds;
  ds.name = name.empty() ? inputs_path : std::move(name);
  ds.inputs = csv::read_matrix(inputs_path);
  ds.labels = csv::read_labels(labels_path);
  ds.precomputed = kind == KernelKind::precomputed;
  if (ds.inputs.rows() != ds.labels.rows()) {
    throw DataError("row count mismatch: " + inputs_path + " has " + std::to_string(ds.inputs.rows()) + " rows, " +
                    labels_path + " has " + std::to_string(ds.labels.rows()));
  }
  if (ds.labels.rows() < 1) throw DataError(labels_path + ": dataset has no examples");
  if (ds.precomputed && ds.inputs.cols() != ds.inputs.rows()) {
    throw DataError(inputs_path + ": precomputed kernel must be m x m");
  }
  ds.space = LabelSpace::binary(static_cast<int>(ds.labels.cols()));
  return ds;
}

struct CircleParams {
  double center_lo = 0.35;
  double center_hi = 0.65;
  double radius = 0.55;
};

// Points uniform in the unit square with features (x, y, 1); microlabel j is
// 1 iff the point falls inside circle j.
inline MultilabelDataset generate_circle(int m, int k, std::uint64_t seed, const CircleParams& params = {}) {
  if (m < 1 || k < 1) throw std::invalid_argument("generate_circle: m and k must be >= 1");
  Rng rng(seed);
  std::vector<std::pair<double, double>> centers;
  for (int j = 0; j < k; ++j) {
    const double cx = rng.uniform(params.center_lo, params.center_hi);
    const double cy = rng.uniform(params.center_lo, params.center_hi);
    centers.emplace_back(cx, cy);
  }
  MultilabelDataset ds;
  ds.name = "circle" + std::to_string(k);
  ds.inputs.resize(m, 3);
  ds.labels.resize(m, k);
  ds.space = LabelSpace::binary(k);
  const double r2 = params.radius * params.radius;
  for (int i = 0; i < m; ++i) {
    const double x = rng.uniform();
    const double y = rng.uniform();
    ds.inputs.row(i) << x, y, 1.0;
    for (int j = 0; j < k; ++j) {
      const double dx = x - centers[j].first;
      const double dy = y - centers[j].second;
      ds.labels(i, j) = dx * dx + dy * dy < r2 ? 1 : 0;
    }
  }
  return ds;
}

// Fold index per example: examples are grouped by positive-label count,
// shuffled within each group and dealt round-robin across folds (the dealing
// position carries over between groups).
inline std::vector<int> stratified_folds(const LabelMatrix& labels, int n_folds, std::uint64_t seed) {
  if (n_folds < 2) throw ConfigError("n_folds must be >= 2");
  if (labels.rows() < n_folds) {
    throw ConfigError("need at least n_folds=" + std::to_string(n_folds) + " examples, got " +
                      std::to_string(labels.rows()));
  }
  std::map<long, std::vector<int>> groups;
  for (Eigen::Index i = 0; i < labels.rows(); ++i) {
    groups[(labels.row(i).array() == 1).count()].push_back(static_cast<int>(i));
  }
  Rng rng(seed);
  std::vector<int> fold(static_cast<std::size_t>(labels.rows()), 0);
  int next = 0;
  for (auto& [count, members] : groups) {
    rng.shuffle(std::span<int>(members));
    for (int i : members) {
      fold[i] = next;
      next = (next + 1) % n_folds;
    }
  }
  return fold;
}

struct MetricsReport {
  double microlabel_accuracy = 0.0;
  double multilabel_accuracy = 0.0;
  std::optional<double> micro_f1;  // empty when nothing was predicted positive
};

// Pooled micro-F1 over all cells; positive means label value 1.
inline MetricsReport evaluate(const LabelMatrix& predictions, const LabelMatrix& truth) {
  if (predictions.rows() != truth.rows() || predictions.cols() != truth.cols()) {
    throw DataError("evaluate: prediction shape " + std::to_string(predictions.rows()) + "x" +
                    std::to_string(predictions.cols()) + " does not match truth " + std::to_string(truth.rows()) +
                    "x" + std::to_string(truth.cols()));
  }
  MetricsReport r;
  if (truth.size() == 0) return r;
  long correct_cells = 0, correct_rows = 0, tp = 0, predicted_pos = 0, actual_pos = 0;
  for (Eigen::Index i = 0; i < truth.rows(); ++i) {
    bool row_ok = true;
    for (Eigen::Index j = 0; j < truth.cols(); ++j) {
      const bool same = predictions(i, j) == truth(i, j);
      correct_cells += same;
      row_ok = row_ok && same;
      const bool p = predictions(i, j) == 1;
      const bool t = truth(i, j) == 1;
      predicted_pos += p;
      actual_pos += t;
      tp += p && t;
    }
    correct_rows += row_ok;
  }
  r.microlabel_accuracy = static_cast<double>(correct_cells) / static_cast<double>(truth.size());
  r.multilabel_accuracy = static_cast<double>(correct_rows) / static_cast<double>(truth.rows());
  if (predicted_pos > 0) {
    const double precision = static_cast<double>(tp) / static_cast<double>(predicted_pos);
    const double recall = actual_pos > 0 ? static_cast<double>(tp) / static_cast<double>(actual_pos) : 0.0;
    r.micro_f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  }
  return r;
}

}  // namespace rge
