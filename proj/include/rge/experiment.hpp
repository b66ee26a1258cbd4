#pragma once

// Experiment runs behind the command-line tool: config handling, data
// generation, training, prediction, cross-validation and diagnostics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "rge/data.hpp"
#include "rge/ensemble.hpp"
#include "rge/error.hpp"
#include "rge/io.hpp"
#include "rge/kernel.hpp"
#include "rge/learner.hpp"
#include "rge/parallel.hpp"
#include "rge/random.hpp"

namespace rge {

using nlohmann::json;

struct ExperimentConfig {
  // Dataset: CSV paths, or a synthetic generator when `features` is empty.
  std::string name;
  std::string features;
  std::string labels;
  std::string synthetic = "circle";
  int m = 1000;
  int k = 10;
  CircleParams circle;
  std::optional<std::uint64_t> data_seed;  // defaults to seed

  KernelKind kernel = KernelKind::quadratic;
  bool normalize = true;

  double C = 1.0;
  std::vector<double> C_grid = {0.01, 0.1, 0.5, 1.0, 5.0, 10.0};
  bool tune = false;
  double tune_fraction = 0.1;
  int max_passes = 100;
  double tolerance = 1e-6;

  int ensemble_size = 1;
  std::string strategy = "all";
  Completion completion = Completion::neutral;
  int n_folds = 5;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string out = "out";

  // predict / diag
  std::string model;
  std::string input;
  std::string truth;
  int diag_points = 10;
};

namespace detail {

template <typename T>
T field(const json& j, const std::string& key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config field '" + key + "' has the wrong type");
  }
}

}  // namespace detail

// Parses a flat JSON config. Unknown keys are rejected.
inline ExperimentConfig config_from_json(const json& j, ExperimentConfig cfg = {}) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  using detail::field;
  for (const auto& [key, value] : j.items()) {
    if (key == "name") cfg.name = field<std::string>(j, key);
    else if (key == "features") cfg.features = field<std::string>(j, key);
    else if (key == "labels") cfg.labels = field<std::string>(j, key);
    else if (key == "synthetic") cfg.synthetic = field<std::string>(j, key);
    else if (key == "m") cfg.m = field<int>(j, key);
    else if (key == "k") cfg.k = field<int>(j, key);
    else if (key == "center_lo") cfg.circle.center_lo = field<double>(j, key);
    else if (key == "center_hi") cfg.circle.center_hi = field<double>(j, key);
    else if (key == "radius") cfg.circle.radius = field<double>(j, key);
    else if (key == "data_seed") cfg.data_seed = field<std::uint64_t>(j, key);
    else if (key == "kernel") cfg.kernel = parse_kernel_kind(field<std::string>(j, key));
    else if (key == "normalize") cfg.normalize = field<bool>(j, key);
    else if (key == "C") cfg.C = field<double>(j, key);
    else if (key == "C_grid") cfg.C_grid = field<std::vector<double>>(j, key);
    else if (key == "tune") cfg.tune = field<bool>(j, key);
    else if (key == "tune_fraction") cfg.tune_fraction = field<double>(j, key);
    else if (key == "max_passes") cfg.max_passes = field<int>(j, key);
    else if (key == "tolerance") cfg.tolerance = field<double>(j, key);
    else if (key == "ensemble_size") cfg.ensemble_size = field<int>(j, key);
    else if (key == "strategy") cfg.strategy = field<std::string>(j, key);
    else if (key == "completion") cfg.completion = parse_completion(field<std::string>(j, key));
    else if (key == "n_folds") cfg.n_folds = field<int>(j, key);
    else if (key == "seed") cfg.seed = field<std::uint64_t>(j, key);
    else if (key == "jobs") cfg.jobs = field<int>(j, key);
    else if (key == "out") cfg.out = field<std::string>(j, key);
    else if (key == "model") cfg.model = field<std::string>(j, key);
    else if (key == "input") cfg.input = field<std::string>(j, key);
    else if (key == "truth") cfg.truth = field<std::string>(j, key);
    else if (key == "diag_points") cfg.diag_points = field<int>(j, key);
    else throw ConfigError("unknown config field '" + key + "'");
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path, ExperimentConfig cfg = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& ex) {
    throw ConfigError(path + ": " + ex.what());
  }
  return config_from_json(j, std::move(cfg));
}

inline std::vector<Strategy> requested_strategies(const std::string& name) {
  if (name == "all") return {Strategy::mve, Strategy::amm, Strategy::mam};
  try {
    return {parse_strategy(name)};
  } catch (const ConfigError&) {
    throw ConfigError("strategy: expected mve, amm, mam or all, got '" + name + "'");
  }
}

inline void validate(const ExperimentConfig& cfg) {
  if (cfg.ensemble_size < 1) throw ConfigError("ensemble_size: must be >= 1");
  if (!(cfg.C > 0.0)) throw ConfigError("C: must be positive");
  if (cfg.C_grid.empty()) throw ConfigError("C_grid: must not be empty");
  for (double c : cfg.C_grid) {
    if (!(c > 0.0)) throw ConfigError("C_grid: every value must be positive");
  }
  if (cfg.max_passes < 0) throw ConfigError("max_passes: must be >= 0");
  if (cfg.tolerance < 0.0) throw ConfigError("tolerance: must be >= 0");
  if (cfg.jobs < 1) throw ConfigError("jobs: must be >= 1");
  if (cfg.n_folds < 2) throw ConfigError("n_folds: must be >= 2");
  if (!(cfg.tune_fraction > 0.0 && cfg.tune_fraction < 1.0)) throw ConfigError("tune_fraction: must be in (0, 1)");
  if (cfg.diag_points < 1) throw ConfigError("diag_points: must be >= 1");
  if (cfg.features.empty()) {
    if (cfg.synthetic != "circle") throw ConfigError("synthetic: only 'circle' is supported");
    if (cfg.m < 1) throw ConfigError("m: must be >= 1");
    if (cfg.k < 1) throw ConfigError("k: must be >= 1");
    if (cfg.circle.radius < 0.0) throw ConfigError("radius: must be >= 0");
    if (cfg.circle.center_lo > cfg.circle.center_hi) throw ConfigError("center_lo: must not exceed center_hi");
  } else if (cfg.labels.empty()) {
    throw ConfigError("labels: required when features is given");
  }
  requested_strategies(cfg.strategy);
}

inline json config_to_json(const ExperimentConfig& cfg) {
  json j = {
      {"kernel", std::string(to_string(cfg.kernel))},
      {"normalize", cfg.normalize},
      {"C", cfg.C},
      {"C_grid", cfg.C_grid},
      {"tune", cfg.tune},
      {"max_passes", cfg.max_passes},
      {"tolerance", cfg.tolerance},
      {"ensemble_size", cfg.ensemble_size},
      {"strategy", cfg.strategy},
      {"completion", std::string(to_string(cfg.completion))},
      {"n_folds", cfg.n_folds},
      {"seed", cfg.seed},
  };
  if (cfg.tune) j["tune_fraction"] = cfg.tune_fraction;
  if (cfg.features.empty()) {
    j["synthetic"] = cfg.synthetic;
    j["m"] = cfg.m;
    j["k"] = cfg.k;
    j["center_lo"] = cfg.circle.center_lo;
    j["center_hi"] = cfg.circle.center_hi;
    j["radius"] = cfg.circle.radius;
    j["data_seed"] = cfg.data_seed.value_or(cfg.seed);
  } else {
    j["features"] = cfg.features;
    j["labels"] = cfg.labels;
  }
  return j;
}

inline MultilabelDataset load_experiment_data(const ExperimentConfig& cfg) {
  if (cfg.features.empty()) {
    auto ds = generate_circle(cfg.m, cfg.k, cfg.data_seed.value_or(cfg.seed), cfg.circle);
    if (!cfg.name.empty()) ds.name = cfg.name;
    return ds;
  }
  return load_dataset(cfg.features, cfg.labels, cfg.kernel, cfg.name);
}

inline std::shared_ptr<const LabelMatrix> select_rows(const LabelMatrix& y, const std::vector<int>& rows) {
  return std::make_shared<const LabelMatrix>(y(rows, Eigen::all));
}

inline KernelMatrix select_kernel(const KernelMatrix& k, const std::vector<int>& rows) {
  return KernelMatrix{k.values(rows, rows), k.kind, k.normalized};
}

inline json metrics_to_json(const MetricsReport& r) {
  return {
      {"microlabel_accuracy", r.microlabel_accuracy},
      {"multilabel_accuracy", r.multilabel_accuracy},
      {"micro_f1", r.micro_f1 ? json(*r.micro_f1) : json("-")},
  };
}

// Kendall tau-b between x and y.
inline double kendall_tau(const std::vector<double>& x, const std::vector<double>& y) {
  long concordant = 0, discordant = 0, ties_x = 0, ties_y = 0;
  for (std::size_t a = 0; a < x.size(); ++a) {
    for (std::size_t b = a + 1; b < x.size(); ++b) {
      const double dx = x[b] - x[a];
      const double dy = y[b] - y[a];
      if (dx == 0.0 && dy == 0.0) continue;
      if (dx == 0.0) {
        ++ties_x;
      } else if (dy == 0.0) {
        ++ties_y;
      } else if ((dx > 0.0) == (dy > 0.0)) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  }
  const double n1 = static_cast<double>(concordant + discordant + ties_x);
  const double n2 = static_cast<double>(concordant + discordant + ties_y);
  if (n1 == 0.0 || n2 == 0.0) return 0.0;
  return static_cast<double>(concordant - discordant) / std::sqrt(n1 * n2);
}

// 1, 2, 4, ... up to T, with T itself always included.
inline std::vector<int> learning_curve_sizes(int T) {
  std::vector<int> out;
  for (int t = 1; t < T; t *= 2) out.push_back(t);
  out.push_back(T);
  return out;
}

struct SlackSelection {
  double C = 1.0;
  std::vector<std::pair<double, double>> scores;  // (C, holdout microlabel accuracy)
  std::vector<int> holdout;
  std::vector<int> remainder;
};

// Picks C on a uniform holdout sample by the microlabel accuracy of one base
// model trained on the remaining examples.
inline SlackSelection select_slack(const MultilabelDataset& ds, const KernelMatrix& kernel,
                                   const std::vector<int>& pool, const ExperimentConfig& cfg) {
  std::vector<int> order = pool;
  Rng rng(cfg.seed);
  rng.shuffle(std::span<int>(order));
  const auto n_hold = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(cfg.tune_fraction * order.size())));
  if (n_hold >= order.size()) throw ConfigError("tune_fraction: leaves no training examples");
  SlackSelection sel;
  sel.holdout.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_hold));
  sel.remainder.assign(order.begin() + static_cast<std::ptrdiff_t>(n_hold), order.end());
  std::sort(sel.holdout.begin(), sel.holdout.end());
  std::sort(sel.remainder.begin(), sel.remainder.end());

  const KernelMatrix train_k = select_kernel(kernel, sel.remainder);
  const Eigen::MatrixXd rows = kernel.values(sel.holdout, sel.remainder);
  const auto train_y = select_rows(ds.labels, sel.remainder);
  const LabelMatrix truth = ds.labels(sel.holdout, Eigen::all);
  Rng tree_rng(cfg.seed);
  const OutputGraph tree = random_spanning_tree(ds.space.num_nodes(), tree_rng);

  sel.scores.resize(cfg.C_grid.size());
  parallel_for(cfg.C_grid.size(), cfg.jobs, [&](std::size_t c) {
    const TrainConfig tc{cfg.C_grid[c], cfg.max_passes, cfg.tolerance, {}};
    const BaseModel model = train_base(train_k, train_y, ds.space, tree, tc, "tune");
    std::vector<Multilabel> pred;
    for (auto& d : member_outputs(model, rows, false).decodings) pred.push_back(std::move(d.labels));
    sel.scores[c] = {cfg.C_grid[c], evaluate(to_matrix(pred, ds.space.num_nodes()), truth).microlabel_accuracy};
  });
  double best = -1.0;
  for (const auto& [c, acc] : sel.scores) {
    if (acc > best || (acc == best && c < sel.C)) {
      best = acc;
      sel.C = c;
    }
  }
  return sel;
}

inline std::vector<int> all_indices(int m) {
  std::vector<int> out(static_cast<std::size_t>(m));
  std::iota(out.begin(), out.end(), 0);
  return out;
}

// Metrics for one (fold, strategy, T) cell.
struct CurvePoint {
  int fold = 0;
  std::string strategy;  // "base" is the mean over the first T members
  int T = 1;
  MetricsReport metrics;
};

struct CvReport {
  json summary;
  std::string learning_curve_csv;
  std::vector<CurvePoint> points;
  double C = 1.0;
};

namespace detail {

inline MetricsReport mean_metrics(const std::vector<MetricsReport>& rs) {
  MetricsReport out;
  std::vector<double> f1;
  for (const auto& r : rs) {
    out.microlabel_accuracy += r.microlabel_accuracy / static_cast<double>(rs.size());
    out.multilabel_accuracy += r.multilabel_accuracy / static_cast<double>(rs.size());
    if (r.micro_f1) f1.push_back(*r.micro_f1);
  }
  if (!f1.empty()) out.micro_f1 = std::accumulate(f1.begin(), f1.end(), 0.0) / static_cast<double>(f1.size());
  return out;
}

inline json mean_std(const std::vector<double>& v) {
  if (v.empty()) return "-";
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  return {{"mean", mean}, {"std", sd}};
}

inline json summarize(const std::vector<MetricsReport>& rs) {
  std::vector<double> micro, multi, f1;
  for (const auto& r : rs) {
    micro.push_back(r.microlabel_accuracy);
    multi.push_back(r.multilabel_accuracy);
    if (r.micro_f1) f1.push_back(*r.micro_f1);
  }
  return {{"microlabel_accuracy", mean_std(micro)},
          {"multilabel_accuracy", mean_std(multi)},
          {"micro_f1", mean_std(f1)}};
}

}  // namespace detail

// Stratified n-fold cross-validation of the ensemble. Within each fold, the
// learning curve evaluates nested prefixes of the same T members.
inline CvReport run_cv(const ExperimentConfig& cfg, const MultilabelDataset& ds, const KernelMatrix& kernel) {
  validate(cfg);
  const auto strategies = requested_strategies(cfg.strategy);
  const bool need_amm = std::find(strategies.begin(), strategies.end(), Strategy::amm) != strategies.end();
  const int k = ds.num_labels();

  CvReport report;
  report.C = cfg.C;
  std::vector<int> pool = all_indices(ds.num_examples());
  std::optional<SlackSelection> tuning;
  if (cfg.tune) {
    tuning = select_slack(ds, kernel, pool, cfg);
    report.C = tuning->C;
    pool = tuning->remainder;
  }
  if (static_cast<int>(pool.size()) < cfg.n_folds) {
    throw ConfigError("n_folds: " + std::to_string(cfg.n_folds) + " folds need at least that many examples, got " +
                      std::to_string(pool.size()));
  }
  const LabelMatrix pool_labels = ds.labels(pool, Eigen::all);
  const std::vector<int> fold_of = stratified_folds(pool_labels, cfg.n_folds, cfg.seed);
  const std::vector<int> sizes = learning_curve_sizes(cfg.ensemble_size);

  for (int f = 0; f < cfg.n_folds; ++f) {
    std::vector<int> train, test;
    for (std::size_t p = 0; p < pool.size(); ++p) (fold_of[p] == f ? test : train).push_back(pool[p]);
    if (train.empty() || test.empty()) throw ConfigError("n_folds: fold " + std::to_string(f) + " is empty");

    const KernelMatrix train_k = select_kernel(kernel, train);
    const Eigen::MatrixXd rows = kernel.values(test, train);
    const auto train_y = select_rows(ds.labels, train);
    const LabelMatrix truth = ds.labels(test, Eigen::all);

    EnsembleConfig ec;
    ec.size = cfg.ensemble_size;
    ec.train = TrainConfig{report.C, cfg.max_passes, cfg.tolerance, {}};
    ec.seed = cfg.seed;
    ec.jobs = cfg.jobs;
    ec.build_consensus = false;
    ec.completion = cfg.completion;
    const EnsembleModel model = train_ensemble(train_k, train_y, ds.space, ec);

    std::vector<MemberOutputs> outputs(model.members.size());
    parallel_for(outputs.size(), cfg.jobs,
                 [&](std::size_t t) { outputs[t] = member_outputs(model.members[t], rows, need_amm); });
    std::vector<MetricsReport> member_metrics;
    for (const auto& out : outputs) {
      std::vector<Multilabel> pred;
      for (const auto& d : out.decodings) pred.push_back(d.labels);
      member_metrics.push_back(evaluate(to_matrix(pred, k), truth));
    }

    for (int T : sizes) {
      const auto count = static_cast<std::size_t>(T);
      report.points.push_back(
          {f, "base", T, detail::mean_metrics({member_metrics.begin(), member_metrics.begin() + T})});
      for (Strategy s : strategies) {
        LabelMatrix pred;
        if (s == Strategy::mve) {
          pred = aggregate_mve(outputs, count, ds.space);
        } else if (s == Strategy::amm) {
          pred = aggregate_amm(outputs, count, ds.space);
        } else {
          const auto consensus =
              average_marginals(std::span<const BaseModel>(model.members.data(), count), cfg.completion);
          pred = predict_mam(consensus, ds.space, rows);
        }
        report.points.push_back({f, std::string(to_string(s)), T, evaluate(pred, truth)});
      }
    }
  }

  // Assemble the summary and the learning curve.
  std::vector<std::string> names = {"base"};
  for (Strategy s : strategies) names.emplace_back(to_string(s));
  auto cell = [&](const std::string& name, int T) {
    std::vector<MetricsReport> rs;
    for (const auto& p : report.points) {
      if (p.strategy == name && p.T == T) rs.push_back(p.metrics);
    }
    return rs;
  };

  json results = json::object();
  json trend = json::object();
  std::string csv = "T,strategy,microlabel_accuracy,multilabel_accuracy,micro_f1\n";
  for (const auto& name : names) {
    results[name] = detail::summarize(cell(name, cfg.ensemble_size));
    std::vector<double> ts, accs;
    for (int T : sizes) {
      const MetricsReport mean = detail::mean_metrics(cell(name, T));
      ts.push_back(T);
      accs.push_back(mean.microlabel_accuracy);
      csv += std::to_string(T) + "," + name + "," + csv::format_number(mean.microlabel_accuracy) + "," +
             csv::format_number(mean.multilabel_accuracy) + "," +
             (mean.micro_f1 ? csv::format_number(*mean.micro_f1) : std::string("-")) + "\n";
    }
    trend[name] = kendall_tau(ts, accs);
  }

  json folds = json::array();
  for (int f = 0; f < cfg.n_folds; ++f) {
    json row = {{"fold", f}};
    for (const auto& p : report.points) {
      if (p.fold == f && p.T == cfg.ensemble_size) row[p.strategy] = metrics_to_json(p.metrics);
    }
    folds.push_back(std::move(row));
  }

  report.summary = {
      {"dataset",
       {{"name", ds.name},
        {"m", ds.num_examples()},
        {"k", k},
        {"cardinality", ds.cardinality()},
        {"density", ds.density()}}},
      {"config", config_to_json(cfg)},
      {"C", report.C},
      {"T", cfg.ensemble_size},
      {"results", results},
      {"folds", folds},
      {"learning_curve_trend", {{"statistic", "kendall_tau_microlabel_accuracy_vs_T"}, {"values", trend}}},
  };
  if (tuning) {
    json scores = json::array();
    for (const auto& [c, acc] : tuning->scores) scores.push_back({{"C", c}, {"microlabel_accuracy", acc}});
    report.summary["tuning"] = {{"holdout_size", tuning->holdout.size()}, {"scores", scores}};
  }
  report.learning_curve_csv = std::move(csv);
  return report;
}

inline std::filesystem::path prepare_out_dir(const std::string& out) {
  if (out.empty()) throw ConfigError("out: output directory required");
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec || !std::filesystem::is_directory(out)) {
    throw ConfigError("out: cannot create output directory " + out + (ec ? ": " + ec.message() : ""));
  }
  return out;
}

inline CvReport run_cv(const ExperimentConfig& cfg) {
  validate(cfg);
  const auto dir = prepare_out_dir(cfg.out);
  const MultilabelDataset ds = load_experiment_data(cfg);
  const KernelMatrix kernel = compute_input_kernel(ds.inputs, cfg.kernel, cfg.normalize);
  CvReport report = run_cv(cfg, ds, kernel);
  io::write_json(dir / "summary.json", report.summary);
  io::write_text(dir / "learning_curve.csv", report.learning_curve_csv);
  return report;
}

inline MultilabelDataset run_gen_data(const ExperimentConfig& cfg) {
  validate(cfg);
  if (!cfg.features.empty()) throw ConfigError("gen-data: features must not be set; configure the synthetic generator");
  const auto dir = prepare_out_dir(cfg.out);
  const MultilabelDataset ds = load_experiment_data(cfg);
  csv::write_matrix((dir / "features.csv").string(), ds.inputs);
  csv::write_matrix((dir / "labels.csv").string(), ds.labels);
  io::write_json(dir / "dataset.json", {{"name", ds.name},
                                        {"m", ds.num_examples()},
                                        {"k", ds.num_labels()},
                                        {"cardinality", ds.cardinality()},
                                        {"density", ds.density()},
                                        {"config", config_to_json(cfg)}});
  return ds;
}

inline io::SavedEnsemble run_train(const ExperimentConfig& cfg) {
  validate(cfg);
  const auto dir = prepare_out_dir(cfg.out);
  const MultilabelDataset ds = load_experiment_data(cfg);
  const KernelMatrix kernel = compute_input_kernel(ds.inputs, cfg.kernel, cfg.normalize);

  std::vector<int> train = all_indices(ds.num_examples());
  double C = cfg.C;
  if (cfg.tune) {
    const auto sel = select_slack(ds, kernel, train, cfg);
    C = sel.C;
    train = sel.remainder;
  }

  EnsembleConfig ec;
  ec.size = cfg.ensemble_size;
  ec.train = TrainConfig{C, cfg.max_passes, cfg.tolerance, {}};
  ec.seed = cfg.seed;
  ec.jobs = cfg.jobs;
  ec.completion = cfg.completion;
  io::SavedEnsemble saved;
  saved.model = train_ensemble(select_kernel(kernel, train), select_rows(ds.labels, train), ds.space, ec);
  saved.strategy = cfg.strategy;
  saved.kernel = cfg.kernel;
  saved.normalized = cfg.normalize;
  if (cfg.kernel != KernelKind::precomputed) saved.train_features = ds.inputs(train, Eigen::all);
  io::save_ensemble(dir, saved);
  return saved;
}

// Kernel rows of `inputs` against the ensemble's training set.
inline Eigen::MatrixXd prediction_rows(const io::SavedEnsemble& saved, const Eigen::MatrixXd& inputs) {
  const auto m = saved.model.members.front().train_labels->rows();
  if (saved.kernel == KernelKind::precomputed) {
    if (inputs.cols() != m) {
      throw DataError("kernel row width mismatch: expected " + std::to_string(m) + " training columns, got " +
                      std::to_string(inputs.cols()));
    }
    return inputs;
  }
  return cross_kernel(inputs, saved.train_features, saved.kernel, saved.normalized);
}

// Writes predictions.csv (one strategy) or predictions_<s>.csv (all).
inline std::map<std::string, LabelMatrix> run_predict(const ExperimentConfig& cfg,
                                                      std::optional<std::string> strategy = std::nullopt) {
  if (cfg.model.empty()) throw ConfigError("model: ensemble directory required");
  if (cfg.input.empty()) throw ConfigError("input: feature file required");
  const auto dir = prepare_out_dir(cfg.out);
  const io::SavedEnsemble saved = io::load_ensemble(cfg.model);
  const std::string name = strategy.value_or(saved.strategy);
  const auto strategies = requested_strategies(name);

  const Eigen::MatrixXd inputs = csv::read_matrix(cfg.input);
  const int k = saved.model.space.num_nodes();
  Eigen::MatrixXd rows;
  if (inputs.rows() > 0) rows = prediction_rows(saved, inputs);

  std::map<std::string, LabelMatrix> out;
  for (Strategy s : strategies) {
    LabelMatrix pred(0, k);
    if (inputs.rows() > 0) pred = predict(saved.model, s, rows);
    out.emplace(std::string(to_string(s)), pred);
  }

  std::optional<LabelMatrix> truth;
  if (!cfg.truth.empty()) truth = csv::read_labels(cfg.truth, saved.model.space.max_size());
  json metrics = json::object();
  for (const auto& [s, pred] : out) {
    const auto file = strategies.size() == 1 ? std::string("predictions.csv") : "predictions_" + s + ".csv";
    csv::write_matrix((dir / file).string(), pred);
    if (truth) metrics[s] = metrics_to_json(evaluate(pred, *truth));
  }
  if (truth) io::write_json(dir / "metrics.json", metrics);
  return out;
}

// Gap decomposition records for a seeded sample of input rows. The multilabel y is the
// true one when `truth` is configured, else the MAM prediction.
inline json run_diag(const ExperimentConfig& cfg) {
  if (cfg.model.empty()) throw ConfigError("model: ensemble directory required");
  if (cfg.input.empty()) throw ConfigError("input: feature file required");
  if (cfg.diag_points < 1) throw ConfigError("diag_points: must be >= 1");
  const auto dir = prepare_out_dir(cfg.out);
  const io::SavedEnsemble saved = io::load_ensemble(cfg.model);
  const Eigen::MatrixXd inputs = csv::read_matrix(cfg.input);
  const int k = saved.model.space.num_nodes();

  std::optional<LabelMatrix> truth;
  if (!cfg.truth.empty()) {
    truth = csv::read_labels(cfg.truth, saved.model.space.max_size());
    if (truth->rows() != inputs.rows() || truth->cols() != k) {
      throw DataError("truth shape " + std::to_string(truth->rows()) + "x" + std::to_string(truth->cols()) +
                      " does not match " + std::to_string(inputs.rows()) + "x" + std::to_string(k));
    }
  }

  std::vector<int> picks = all_indices(static_cast<int>(inputs.rows()));
  Rng rng(cfg.seed);
  rng.shuffle(std::span<int>(picks));
  picks.resize(std::min<std::size_t>(picks.size(), static_cast<std::size_t>(cfg.diag_points)));
  std::sort(picks.begin(), picks.end());

  json records = json::array();
  if (!picks.empty()) {
    const Eigen::MatrixXd rows = prediction_rows(saved, inputs(picks, Eigen::all));
    const LabelMatrix mam = predict(saved.model, Strategy::mam, rows);
    for (std::size_t p = 0; p < picks.size(); ++p) {
      const auto r = static_cast<Eigen::Index>(p);
      Multilabel y(static_cast<std::size_t>(k));
      for (int j = 0; j < k; ++j) y[j] = truth ? (*truth)(picks[p], j) : mam(r, j);
      Eigen::MatrixXd scores(saved.model.size(), k);
      for (int t = 0; t < saved.model.size(); ++t) {
        const auto& member = saved.model.members[t];
        const auto ns = node_scores(member.potentials(rows.row(r)), member.graph, member.space, y);
        for (int j = 0; j < k; ++j) scores(t, j) = ns[j];
      }
      const auto d = gap_diagnostics(scores);
      const double residual = std::abs(d.gap - d.diversity - d.coherence);
      if (residual > 1e-9 * std::max(1.0, std::abs(d.gap))) {
        throw IntegrityError("diagnostic identity violated at input " + std::to_string(picks[p]) + " (residual " +
                             csv::format_number(residual) + ")");
      }
      records.push_back({{"input", picks[p]},
                         {"y", y},
                         {"y_source", truth ? "truth" : "mam"},
                         {"individual_error", d.individual_error},
                         {"ensemble_error", d.ensemble_error},
                         {"gap", d.gap},
                         {"variance", d.variance},
                         {"diversity", d.diversity},
                         {"coherence", d.coherence}});
    }
  }
  json report = {{"T", saved.model.size()}, {"records", records}};
  io::write_json(dir / "diagnostics.json", report);
  return report;
}

}  // namespace rge
