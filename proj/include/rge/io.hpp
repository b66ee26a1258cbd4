#pragma once

// JSON persistence for base models, ensembles and graphs.
//
// An ensemble directory holds manifest.json plus base_NNN.json per member.
// Marginal duals are written as sparse [example, edge, label, value] triplets.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rge/ensemble.hpp"
#include "rge/error.hpp"
#include "rge/graph.hpp"
#include "rge/kernel.hpp"
#include "rge/learner.hpp"

namespace rge::io {

using nlohmann::json;

inline json graph_to_json(const OutputGraph& g) {
  json edges = json::array();
  for (const auto& e : g.edges()) edges.push_back({e.a, e.b});
  return {{"k", g.num_nodes()}, {"edges", edges}};
}

inline OutputGraph graph_from_json(const json& j) {
  try {
    std::vector<Edge> edges;
    for (const auto& e : j.at("edges")) edges.push_back({e.at(0).get<int>(), e.at(1).get<int>()});
    return OutputGraph(j.at("k").get<int>(), std::move(edges));
  } catch (const json::exception& ex) {
    throw DataError(std::string("malformed graph: ") + ex.what());
  } catch (const std::invalid_argument& ex) {
    throw DataError(std::string("invalid graph: ") + ex.what());
  }
}

inline json tensor_to_json(const EdgeTensor& t) {
  json out = json::array();
  for (int i = 0; i < t.num_examples(); ++i) {
    for (int e = 0; e < t.num_edges(); ++e) {
      for (int u = 0; u < t.edge_size(e); ++u) {
        if (const double v = t(i, e, u); v != 0.0) out.push_back({i, e, u, v});
      }
    }
  }
  return out;
}

inline EdgeTensor tensor_from_json(const json& triplets, int m, const OutputGraph& g, const LabelSpace& space) {
  EdgeTensor t(m, g, space);
  for (const auto& entry : triplets) {
    const int i = entry.at(0).get<int>();
    const int e = entry.at(1).get<int>();
    const int u = entry.at(2).get<int>();
    if (i < 0 || i >= m || e < 0 || e >= g.num_edges() || u < 0 || u >= t.edge_size(e)) {
      throw DataError("marginal triplet [" + std::to_string(i) + "," + std::to_string(e) + "," + std::to_string(u) +
                      "] out of range");
    }
    t(i, e, u) = entry.at(3).get<double>();
  }
  return t;
}

inline json labels_to_json(const LabelMatrix& y) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < y.cols(); ++j) row.push_back(y(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline LabelMatrix labels_from_json(const json& rows, int k) {
  LabelMatrix y(static_cast<Eigen::Index>(rows.size()), k);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != static_cast<std::size_t>(k)) {
      throw DataError("train_label_matrix row " + std::to_string(i) + " has " + std::to_string(rows[i].size()) +
                      " entries, expected " + std::to_string(k));
    }
    for (int j = 0; j < k; ++j) y(static_cast<Eigen::Index>(i), j) = rows[i][j].get<int>();
  }
  return y;
}

inline json matrix_to_json(const Eigen::MatrixXd& x) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < x.cols(); ++j) row.push_back(x(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const json& rows) {
  const auto cols = rows.empty() ? std::size_t{0} : rows[0].size();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != cols) throw DataError("ragged matrix at row " + std::to_string(i));
    for (std::size_t j = 0; j < cols; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j].get<double>();
  }
  return x;
}

inline json kernel_info(KernelKind kind, bool normalized) {
  return {{"kind", std::string(to_string(kind))}, {"normalized", normalized}};
}

inline json base_model_to_json(const BaseModel& model, KernelKind kind, bool normalized) {
  json a = json::array();
  for (int i = 0; i < model.mu.num_examples(); ++i) a.push_back(model.mu.mass(i));
  json edges = graph_to_json(model.graph)["edges"];
  return {
      {"k", model.graph.num_nodes()},
      {"label_sizes", model.space.sizes()},
      {"edges", edges},
      {"C", model.C},
      {"A", a},
      {"mu", tensor_to_json(model.mu)},
      {"train_label_matrix", labels_to_json(*model.train_labels)},
      {"kernel", kernel_info(kind, normalized)},
      {"passes", model.passes},
      {"objective_log", model.objective_log},
  };
}

// `labels` may be shared between members; when null the file's matrix is used.
inline BaseModel base_model_from_json(const json& j, std::shared_ptr<const LabelMatrix> labels = nullptr) {
  try {
    BaseModel model;
    const int k = j.at("k").get<int>();
    model.graph = graph_from_json({{"k", k}, {"edges", j.at("edges")}});
    model.space = LabelSpace(j.at("label_sizes").get<std::vector<int>>());
    if (model.space.num_nodes() != k) throw DataError("label_sizes has wrong length");
    model.C = j.at("C").get<double>();
    if (!labels) labels = std::make_shared<const LabelMatrix>(labels_from_json(j.at("train_label_matrix"), k));
    model.train_labels = std::move(labels);
    const int m = static_cast<int>(model.train_labels->rows());
    model.mu = tensor_from_json(j.at("mu"), m, model.graph, model.space);
    model.train_edge_labels = training_edge_labels(*model.train_labels, model.graph, model.space);
    model.passes = j.value("passes", 0);
    model.objective_log = j.value("objective_log", std::vector<double>{});
    return model;
  } catch (const json::exception& ex) {
    throw DataError(std::string("malformed base model: ") + ex.what());
  }
}

inline json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& ex) {
    throw DataError(path.string() + ": " + ex.what());
  }
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

inline void write_json(const std::filesystem::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

inline std::string member_file(int t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "base_%03d.json", t);
  return buf;
}

// Everything needed to predict with a trained ensemble.
struct SavedEnsemble {
  EnsembleModel model;
  std::string strategy = "mam";
  KernelKind kernel = KernelKind::linear;
  bool normalized = false;
  Eigen::MatrixXd train_features;  // empty for precomputed kernels
};

inline void save_ensemble(const std::filesystem::path& dir, const SavedEnsemble& saved) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  const auto& model = saved.model;
  json manifest = {
      {"T", model.size()},
      {"strategy", saved.strategy},
      {"seed", model.seed},
      {"completion", std::string(to_string(model.completion))},
      {"kernel", kernel_info(saved.kernel, saved.normalized)},
      {"members", json::array()},
  };
  for (int t = 0; t < model.size(); ++t) {
    manifest["members"].push_back(member_file(t));
    write_json(dir / member_file(t), base_model_to_json(model.members[t], saved.kernel, saved.normalized));
  }
  if (saved.kernel != KernelKind::precomputed) manifest["train_features"] = matrix_to_json(saved.train_features);
  if (model.consensus) {
    manifest["consensus_edges"] = graph_to_json(model.consensus->graph)["edges"];
    manifest["mu_bar"] = tensor_to_json(model.consensus->mu_bar);
  }
  write_json(dir / "manifest.json", manifest);
}

inline SavedEnsemble load_ensemble(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) throw DataError("no ensemble manifest at " + manifest_path.string());
  const json manifest = read_json(manifest_path);
  SavedEnsemble saved;
  try {
    saved.strategy = manifest.at("strategy").get<std::string>();
    saved.kernel = parse_kernel_kind(manifest.at("kernel").at("kind").get<std::string>());
    saved.normalized = manifest.at("kernel").at("normalized").get<bool>();
    saved.model.seed = manifest.at("seed").get<std::uint64_t>();
    saved.model.completion = parse_completion(manifest.value("completion", std::string("neutral")));
    const auto& members = manifest.at("members");
    if (members.size() != manifest.at("T").get<std::size_t>() || members.empty()) {
      throw DataError("manifest member list does not match T");
    }
    std::shared_ptr<const LabelMatrix> labels;
    for (const auto& name : members) {
      const auto path = dir / name.get<std::string>();
      if (!std::filesystem::exists(path)) throw DataError("missing base model " + path.string());
      saved.model.members.push_back(base_model_from_json(read_json(path), labels));
      labels = saved.model.members.back().train_labels;
    }
    saved.model.space = saved.model.members.front().space;
    if (saved.kernel != KernelKind::precomputed) saved.train_features = matrix_from_json(manifest.at("train_features"));
    if (manifest.contains("mu_bar")) {
      Consensus c;
      c.graph = graph_from_json({{"k", saved.model.space.num_nodes()}, {"edges", manifest.at("consensus_edges")}});
      c.mu_bar = tensor_from_json(manifest.at("mu_bar"), static_cast<int>(labels->rows()), c.graph, saved.model.space);
      c.edge_labels = training_edge_labels(*labels, c.graph, saved.model.space);
      c.completion = saved.model.completion;
      saved.model.consensus = std::move(c);
    }
  } catch (const json::exception& ex) {
    throw DataError(std::string("malformed manifest: ") + ex.what());
  }
  return saved;
}

}  // namespace rge::io
