#pragma once

// Ensembles of graph-labeling base models on random spanning trees, with
// three aggregation rules:
//   MVE  per-microlabel majority vote over base MAP predictions
//   AMM  argmax of the averaged base max-marginals
//   MAM  MAP inference on the consensus graph with averaged marginal duals

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "rge/error.hpp"
#include "rge/graph.hpp"
#include "rge/inference.hpp"
#include "rge/learner.hpp"
#include "rge/parallel.hpp"
#include "rge/random.hpp"

namespace rge {

enum class Strategy { mve, amm, mam };

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::mve: return "mve";
    case Strategy::amm: return "amm";
    case Strategy::mam: return "mam";
  }
  return "?";
}

inline Strategy parse_strategy(std::string_view name) {
  if (name == "mve") return Strategy::mve;
  if (name == "amm") return Strategy::amm;
  if (name == "mam") return Strategy::mam;
  throw ConfigError("unknown strategy '" + std::string(name) + "'");
}

// How a member's marginals are filled in on consensus edges outside its tree.
//   product  mu_a(u_a) mu_b(u_b) / A_i from the member's node marginals; stays
//            inside the marginal polytope of the consensus graph
//   neutral  all of A_i on the training edge label; the edge then carries zero
//            potential, so MAM scores equal the average of the members' own
//            edge potentials
enum class Completion { neutral, product };

inline std::string_view to_string(Completion c) { return c == Completion::neutral ? "neutral" : "product"; }

inline Completion parse_completion(std::string_view name) {
  if (name == "neutral") return Completion::neutral;
  if (name == "product") return Completion::product;
  throw ConfigError("unknown completion rule '" + std::string(name) + "'");
}

// Consensus graph with the ensemble-averaged, completed marginal duals.
struct Consensus {
  OutputGraph graph;
  MarginalDuals mu_bar;
  LabelMatrix edge_labels;  // y_ie on consensus edges
  Completion completion = Completion::neutral;

  Eigen::MatrixXd coefficients() const { return dual_coefficients(mu_bar, edge_labels); }
};

struct EnsembleModel {
  std::vector<BaseModel> members;
  LabelSpace space;
  std::uint64_t seed = 0;
  Completion completion = Completion::neutral;
  std::optional<Consensus> consensus;

  int size() const { return static_cast<int>(members.size()); }
};

struct EnsembleConfig {
  int size = 1;
  TrainConfig train;
  std::uint64_t seed = 0;
  int jobs = 1;
  bool build_consensus = true;
  Completion completion = Completion::neutral;
};

// Completes every member's marginals on the union of all member edges and
// averages them.
inline Consensus average_marginals(std::span<const BaseModel> members, Completion completion = Completion::neutral) {
  if (members.empty()) throw std::invalid_argument("average_marginals: no models");
  const auto& first = members.front();
  const int m = first.mu.num_examples();
  for (const auto& model : members) {
    if (model.graph.num_nodes() != first.graph.num_nodes() || model.mu.num_examples() != m ||
        model.space != first.space) {
      throw std::invalid_argument("average_marginals: models disagree on training set or label space");
    }
  }

  std::vector<OutputGraph> graphs;
  for (const auto& model : members) graphs.push_back(model.graph);
  Consensus out;
  out.graph = consensus_union(graphs);
  const LabelSpace& space = first.space;
  out.mu_bar = MarginalDuals(m, out.graph, space);
  out.edge_labels = training_edge_labels(*first.train_labels, out.graph, space);
  out.completion = completion;
  const double weight = 1.0 / static_cast<double>(members.size());

  for (std::size_t t = 0; t < members.size(); ++t) {
    const auto& model = members[t];
    const auto& g = model.graph;
    for (int i = 0; i < m; ++i) {
      const double mass = model.mu.mass(i);
      // Node marginals of this example, checked across all incident edges.
      std::vector<std::vector<double>> node(static_cast<std::size_t>(g.num_nodes()));
      for (int j = 0; j < g.num_nodes(); ++j) {
        for (const auto& nb : g.neighbors(j)) {
          auto marg = node_marginal(model.mu, g, space, i, nb.edge, j);
          if (node[j].empty()) {
            node[j] = std::move(marg);
            continue;
          }
          for (std::size_t u = 0; u < marg.size(); ++u) {
            if (std::abs(marg[u] - node[j][u]) > 1e-9) {
              throw IntegrityError("model " + std::to_string(t) + ", example " + std::to_string(i) +
                                   ": inconsistent node marginals at node " + std::to_string(j));
            }
          }
        }
      }
      for (int ce = 0; ce < out.graph.num_edges(); ++ce) {
        const Edge& edge = out.graph.edge(ce);
        const int n = space.edge_size(edge);
        if (const auto own = g.find_edge(edge.a, edge.b)) {
          for (int u = 0; u < n; ++u) out.mu_bar(i, ce, u) += weight * model.mu(i, *own, u);
        } else if (completion == Completion::neutral) {
          out.mu_bar(i, ce, out.edge_labels(i, ce)) += weight * mass;
        } else if (mass > 0.0) {
          for (int u = 0; u < n; ++u) {
            const double completed =
                node[edge.a][space.head_label(edge, u)] * node[edge.b][space.tail_label(edge, u)] / mass;
            out.mu_bar(i, ce, u) += weight * completed;
          }
        }
      }
    }
  }
  return out;
}

inline EnsembleModel train_ensemble(const KernelMatrix& kernel, std::shared_ptr<const LabelMatrix> labels,
                                    const LabelSpace& space, const EnsembleConfig& cfg) {
  if (cfg.size < 1) throw std::invalid_argument("ensemble size must be >= 1");
  EnsembleModel model;
  model.space = space;
  model.seed = cfg.seed;
  model.completion = cfg.completion;
  model.members.resize(static_cast<std::size_t>(cfg.size));
  parallel_for(model.members.size(), cfg.jobs, [&](std::size_t t) {
    Rng rng(cfg.seed + t);
    const OutputGraph tree = random_spanning_tree(space.num_nodes(), rng);
    model.members[t] = train_base(kernel, labels, space, tree, cfg.train, "train");
  });
  if (cfg.build_consensus) model.consensus = average_marginals(model.members, cfg.completion);
  return model;
}

// Majority vote per microlabel; ties go to the smallest label.
inline Multilabel vote(std::span<const Multilabel> predictions, const LabelSpace& space) {
  if (predictions.empty()) throw std::invalid_argument("vote: no predictions");
  Multilabel out(static_cast<std::size_t>(space.num_nodes()), 0);
  for (int j = 0; j < space.num_nodes(); ++j) {
    std::vector<int> counts(static_cast<std::size_t>(space.size(j)), 0);
    for (const auto& y : predictions) ++counts[y[j]];
    out[j] = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  }
  return out;
}

// argmax_u of the mean max-marginal per node; ties go to the smallest label.
inline Multilabel average_max_marginals(std::span<const MaxMarginals> marginals, const LabelSpace& space) {
  if (marginals.empty()) throw std::invalid_argument("average_max_marginals: no models");
  Multilabel out(static_cast<std::size_t>(space.num_nodes()), 0);
  for (int j = 0; j < space.num_nodes(); ++j) {
    std::vector<double> mean(static_cast<std::size_t>(space.size(j)), 0.0);
    for (const auto& mm : marginals) {
      for (int u = 0; u < space.size(j); ++u) mean[u] += mm.values(j, u) / static_cast<double>(marginals.size());
    }
    out[j] = static_cast<int>(std::max_element(mean.begin(), mean.end()) - mean.begin());
  }
  return out;
}

// Base-model outputs for a batch of inputs, given their kernel rows against
// the training set.
struct MemberOutputs {
  std::vector<Decoding> decodings;
  std::vector<MaxMarginals> max_marginals;
};

inline MemberOutputs member_outputs(const BaseModel& model, const Eigen::MatrixXd& kernel_rows,
                                    bool with_max_marginals = true) {
  const Eigen::MatrixXd packed = kernel_rows * model.coefficients();
  MemberOutputs out;
  for (Eigen::Index r = 0; r < packed.rows(); ++r) {
    const auto pot = unpack_potentials(packed.row(r), model.graph, model.space);
    out.decodings.push_back(map_decode(pot, model.graph, model.space));
    if (with_max_marginals) out.max_marginals.push_back(max_marginals(pot, model.graph, model.space));
  }
  return out;
}

inline LabelMatrix to_matrix(std::span<const Multilabel> rows, int k) {
  LabelMatrix out(static_cast<Eigen::Index>(rows.size()), k);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (int j = 0; j < k; ++j) out(static_cast<Eigen::Index>(r), j) = rows[r][j];
  }
  return out;
}

// MVE over the first `count` members.
inline LabelMatrix aggregate_mve(std::span<const MemberOutputs> outputs, std::size_t count, const LabelSpace& space) {
  const std::size_t n = outputs.empty() ? 0 : outputs.front().decodings.size();
  std::vector<Multilabel> result;
  std::vector<Multilabel> votes(count);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t t = 0; t < count; ++t) votes[t] = outputs[t].decodings[r].labels;
    result.push_back(vote(votes, space));
  }
  return to_matrix(result, space.num_nodes());
}

// AMM over the first `count` members.
inline LabelMatrix aggregate_amm(std::span<const MemberOutputs> outputs, std::size_t count, const LabelSpace& space) {
  const std::size_t n = outputs.empty() ? 0 : outputs.front().decodings.size();
  std::vector<Multilabel> result;
  std::vector<MaxMarginals> marg(count);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t t = 0; t < count; ++t) marg[t] = outputs[t].max_marginals[r];
    result.push_back(average_max_marginals(marg, space));
  }
  return to_matrix(result, space.num_nodes());
}

inline std::vector<Decoding> consensus_decodings(const Consensus& consensus, const LabelSpace& space,
                                                 const Eigen::MatrixXd& kernel_rows) {
  const Eigen::MatrixXd packed = kernel_rows * consensus.coefficients();
  std::vector<Decoding> out;
  for (Eigen::Index r = 0; r < packed.rows(); ++r) {
    out.push_back(map_decode(unpack_potentials(packed.row(r), consensus.graph, space), consensus.graph, space));
  }
  return out;
}

inline LabelMatrix predict_mam(const Consensus& consensus, const LabelSpace& space,
                               const Eigen::MatrixXd& kernel_rows) {
  std::vector<Multilabel> rows;
  for (auto& d : consensus_decodings(consensus, space, kernel_rows)) rows.push_back(std::move(d.labels));
  return to_matrix(rows, space.num_nodes());
}

inline LabelMatrix predict(const EnsembleModel& model, Strategy strategy, const Eigen::MatrixXd& kernel_rows) {
  if (model.members.empty()) throw std::invalid_argument("predict: empty ensemble");
  if (strategy == Strategy::mam) {
    if (model.consensus) return predict_mam(*model.consensus, model.space, kernel_rows);
    return predict_mam(average_marginals(model.members, model.completion), model.space, kernel_rows);
  }
  std::vector<MemberOutputs> outputs;
  for (const auto& m : model.members) outputs.push_back(member_outputs(m, kernel_rows, strategy == Strategy::amm));
  return strategy == Strategy::mve ? aggregate_mve(outputs, outputs.size(), model.space)
                                   : aggregate_amm(outputs, outputs.size(), model.space);
}

// Node scores psi_j(y_j): half of every incident edge potential at the edge
// label induced by y, so that the node scores sum to the multilabel score.
inline std::vector<double> node_scores(const EdgePotentials& pot, const OutputGraph& g, const LabelSpace& space,
                                       std::span<const int> y) {
  std::vector<double> out(static_cast<std::size_t>(g.num_nodes()), 0.0);
  for (int e = 0; e < g.num_edges(); ++e) {
    const Edge& edge = g.edge(e);
    const double half = 0.5 * pot.tables[e][space.edge_label(edge, y[edge.a], y[edge.b])];
    out[edge.a] += half;
    out[edge.b] += half;
  }
  return out;
}

// Reconstruction-error gap of the averaged scorer over individual scorers for
// one (x, y), with its variance decomposition.
struct ScoreDiagnostics {
  double individual_error = 0.0;  // mean over t of (psi* - psi_t)^2
  double ensemble_error = 0.0;    // (psi* - mean_t psi_t)^2
  double gap = 0.0;               // individual_error - ensemble_error
  double variance = 0.0;          // population variance of sum_j Psi_j
  double diversity = 0.0;         // sum_j Var(Psi_j)
  double coherence = 0.0;         // sum_{p != q} Cov(Psi_p, Psi_q)
};

// `scores` is T x k: row t holds model t's node scores. `reference` holds the
// reference node scores psi*_j (zero when absent).
inline ScoreDiagnostics gap_diagnostics(const Eigen::MatrixXd& scores,
                                             const std::optional<Eigen::VectorXd>& reference = std::nullopt) {
  const auto T = scores.rows();
  if (T < 1) throw std::invalid_argument("gap_diagnostics: need at least one model");
  if (reference && reference->size() != scores.cols()) {
    throw std::invalid_argument("gap_diagnostics: reference has wrong node count");
  }
  const double truth = reference ? reference->sum() : 0.0;
  const Eigen::VectorXd totals = scores.rowwise().sum();
  const double mean_total = totals.mean();

  ScoreDiagnostics d;
  d.individual_error = (totals.array() - truth).square().mean();
  d.ensemble_error = (truth - mean_total) * (truth - mean_total);
  d.gap = d.individual_error - d.ensemble_error;
  d.variance = (totals.array() - mean_total).square().mean();

  const Eigen::MatrixXd centered = scores.rowwise() - scores.colwise().mean();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(T);
  d.diversity = cov.trace();
  d.coherence = cov.sum() - d.diversity;
  return d;
}

}  // namespace rge
