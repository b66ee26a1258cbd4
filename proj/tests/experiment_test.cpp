#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <gtest/gtest.h>

#include "rge/experiment.hpp"

namespace rge {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class Workspace {
 public:
  Workspace()
      : path_(fs::temp_directory_path() /
              ("rge_exp_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()))) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~Workspace() { fs::remove_all(path_); }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ExperimentConfig small_circle() {
  ExperimentConfig cfg;
  cfg.m = 60;
  cfg.k = 4;
  cfg.kernel = KernelKind::quadratic;
  cfg.C = 1.0;
  cfg.max_passes = 15;
  cfg.n_folds = 3;
  cfg.seed = 4;
  return cfg;
}

// Labels are the signs of the first k features; a bias column is appended.
void write_separable(const std::string& x_path, const std::string& y_path, int m, int k, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd x(m, k + 1);
  LabelMatrix y(m, k);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < k; ++j) {
      const bool on = rng.below(2) == 1;
      x(i, j) = on ? 1.0 : -1.0;
      y(i, j) = on ? 1 : 0;
    }
    x(i, k) = 1.0;
  }
  csv::write_matrix(x_path, x);
  csv::write_matrix(y_path, y);
}

TEST(Config, ParsesKnownFields) {
  const auto cfg = config_from_json(json::parse(
      R"({"m": 20, "k": 3, "kernel": "linear", "normalize": false, "C": 2.5, "ensemble_size": 7,
          "strategy": "amm", "completion": "product", "seed": 11, "radius": 0.4, "C_grid": [1, 2]})"));
  EXPECT_EQ(cfg.m, 20);
  EXPECT_EQ(cfg.k, 3);
  EXPECT_EQ(cfg.kernel, KernelKind::linear);
  EXPECT_FALSE(cfg.normalize);
  EXPECT_EQ(cfg.C, 2.5);
  EXPECT_EQ(cfg.ensemble_size, 7);
  EXPECT_EQ(cfg.strategy, "amm");
  EXPECT_EQ(cfg.completion, Completion::product);
  EXPECT_EQ(cfg.seed, 11u);
  EXPECT_EQ(cfg.circle.radius, 0.4);
  EXPECT_EQ(cfg.C_grid, (std::vector<double>{1, 2}));
  EXPECT_NO_THROW(validate(cfg));
}

TEST(Config, RejectsUnknownAndMistypedFields) {
  auto message = [](const std::string& text) {
    try {
      validate(config_from_json(json::parse(text)));
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("accepted");
  };
  EXPECT_NE(message(R"({"ensemble": 3})").find("ensemble"), std::string::npos);
  EXPECT_NE(message(R"({"C": "big"})").find("'C'"), std::string::npos);
  EXPECT_NE(message(R"({"ensemble_size": 0})").find("ensemble_size"), std::string::npos);
  EXPECT_NE(message(R"({"strategy": "median"})").find("strategy"), std::string::npos);
  EXPECT_NE(message(R"({"kernel": "rbf"})").find("rbf"), std::string::npos);
  EXPECT_NE(message(R"({"n_folds": 1})").find("n_folds"), std::string::npos);
  EXPECT_NE(message(R"({"features": "x.csv"})").find("labels"), std::string::npos);
  EXPECT_NE(message(R"([1, 2])").find("object"), std::string::npos);
  EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

TEST(Config, RoundTripsThroughJson) {
  auto cfg = small_circle();
  cfg.completion = Completion::product;
  const auto again = config_from_json(config_to_json(cfg));
  EXPECT_EQ(config_to_json(again), config_to_json(cfg));
}

TEST(Config, ShippedConfigIsValid) {
  const auto cfg = load_config(RGE_SOURCE_DIR "/configs/circle10.json");
  EXPECT_NO_THROW(validate(cfg));
  EXPECT_EQ(cfg.k, 10);
  EXPECT_EQ(cfg.m, 1000);
}

TEST(Metrics, UndefinedF1IsDash) {
  MetricsReport r;
  r.microlabel_accuracy = 0.5;
  EXPECT_EQ(metrics_to_json(r)["micro_f1"], "-");
  r.micro_f1 = 0.25;
  EXPECT_EQ(metrics_to_json(r)["micro_f1"], 0.25);
}

TEST(KendallTau, HandValues) {
  EXPECT_DOUBLE_EQ(kendall_tau({1, 2, 3}, {1, 2, 3}), 1.0);
  EXPECT_DOUBLE_EQ(kendall_tau({1, 2, 3}, {3, 2, 1}), -1.0);
  // One tie in y: C = 2, D = 0, n0 = 3, ties in y = 1.
  EXPECT_NEAR(kendall_tau({1, 2, 3}, {1, 1, 2}), 2.0 / std::sqrt(6.0), 1e-15);
  EXPECT_EQ(kendall_tau({1, 2, 3}, {5, 5, 5}), 0.0);
  EXPECT_EQ(kendall_tau({1}, {1}), 0.0);
}

TEST(LearningCurve, Sizes) {
  EXPECT_EQ(learning_curve_sizes(1), (std::vector<int>{1}));
  EXPECT_EQ(learning_curve_sizes(16), (std::vector<int>{1, 2, 4, 8, 16}));
  EXPECT_EQ(learning_curve_sizes(10), (std::vector<int>{1, 2, 4, 8, 10}));
}

TEST(CrossValidation, SingleMemberStrategiesMatchBase) {
  auto cfg = small_circle();
  cfg.ensemble_size = 1;
  const auto ds = load_experiment_data(cfg);
  const auto kernel = compute_input_kernel(ds.inputs, cfg.kernel, cfg.normalize);
  const auto report = run_cv(cfg, ds, kernel);
  std::map<int, MetricsReport> base;
  for (const auto& p : report.points) {
    if (p.strategy == "base") base[p.fold] = p.metrics;
  }
  ASSERT_EQ(base.size(), 3u);
  int checked = 0;
  for (const auto& p : report.points) {
    if (p.strategy == "base") continue;
    EXPECT_EQ(p.metrics.microlabel_accuracy, base[p.fold].microlabel_accuracy) << p.strategy;
    EXPECT_EQ(p.metrics.multilabel_accuracy, base[p.fold].multilabel_accuracy) << p.strategy;
    ++checked;
  }
  EXPECT_EQ(checked, 9);
  for (const auto& name : {"mve", "amm", "mam"}) {
    EXPECT_EQ(report.summary["results"][name], report.summary["results"]["base"]) << name;
  }
}

TEST(CrossValidation, ReportShape) {
  auto cfg = small_circle();
  cfg.ensemble_size = 4;
  cfg.strategy = "mam";
  const auto ds = load_experiment_data(cfg);
  const auto kernel = compute_input_kernel(ds.inputs, cfg.kernel, cfg.normalize);
  const auto report = run_cv(cfg, ds, kernel);
  const auto& s = report.summary;
  EXPECT_EQ(s["T"], 4);
  EXPECT_EQ(s["folds"].size(), 3u);
  EXPECT_TRUE(s["results"].contains("base"));
  EXPECT_TRUE(s["results"].contains("mam"));
  EXPECT_FALSE(s["results"].contains("mve"));
  EXPECT_EQ(s["dataset"]["m"], 60);
  // Header plus (base, mam) x T in {1, 2, 4}.
  EXPECT_EQ(std::count(report.learning_curve_csv.begin(), report.learning_curve_csv.end(), '\n'), 7);
  EXPECT_EQ(report.learning_curve_csv.rfind("T,strategy,microlabel_accuracy,multilabel_accuracy,micro_f1\n", 0), 0u);
  for (const auto& p : report.points) {
    EXPECT_GE(p.metrics.microlabel_accuracy, p.metrics.multilabel_accuracy);
    EXPECT_LE(p.metrics.microlabel_accuracy, 1.0);
  }
}

TEST(CrossValidation, FoldsPartitionThePool) {
  auto cfg = small_circle();
  const auto ds = load_experiment_data(cfg);
  const auto folds = stratified_folds(ds.labels, cfg.n_folds, cfg.seed);
  std::vector<std::set<int>> members(static_cast<std::size_t>(cfg.n_folds));
  for (int i = 0; i < ds.num_examples(); ++i) members[folds[i]].insert(i);
  std::size_t total = 0;
  for (const auto& m : members) {
    EXPECT_FALSE(m.empty());
    total += m.size();
  }
  EXPECT_EQ(total, static_cast<std::size_t>(ds.num_examples()));
}

TEST(CrossValidation, DeterministicAcrossJobs) {
  Workspace ws;
  auto cfg = small_circle();
  cfg.ensemble_size = 3;
  cfg.out = ws / "a";
  run_cv(cfg);
  cfg.out = ws / "b";
  cfg.jobs = 3;
  run_cv(cfg);
  EXPECT_EQ(slurp(ws / "a/summary.json"), slurp(ws / "b/summary.json"));
  EXPECT_EQ(slurp(ws / "a/learning_curve.csv"), slurp(ws / "b/learning_curve.csv"));
  EXPECT_FALSE(slurp(ws / "a/summary.json").empty());
}

TEST(CrossValidation, TuningPicksFromTheGrid) {
  auto cfg = small_circle();
  cfg.tune = true;
  cfg.C_grid = {0.1, 1.0};
  const auto ds = load_experiment_data(cfg);
  const auto kernel = compute_input_kernel(ds.inputs, cfg.kernel, cfg.normalize);
  const auto sel = select_slack(ds, kernel, all_indices(ds.num_examples()), cfg);
  EXPECT_EQ(sel.holdout.size(), 6u);
  EXPECT_EQ(sel.remainder.size(), 54u);
  EXPECT_TRUE(sel.C == 0.1 || sel.C == 1.0);
  double best = 0.0;
  for (const auto& [c, acc] : sel.scores) best = std::max(best, acc);
  for (const auto& [c, acc] : sel.scores) {
    if (acc == best) {
      EXPECT_EQ(sel.C, c);
      break;
    }
  }
  const auto report = run_cv(cfg, ds, kernel);
  EXPECT_EQ(report.summary["tuning"]["holdout_size"], 6);
  EXPECT_EQ(report.C, sel.C);
}

TEST(TrainPredict, RecoversSeparableLabels) {
  Workspace ws;
  write_separable(ws / "x.csv", ws / "y.csv", 40, 4, 3);
  ExperimentConfig cfg;
  cfg.features = ws / "x.csv";
  cfg.labels = ws / "y.csv";
  cfg.kernel = KernelKind::linear;
  cfg.normalize = false;
  cfg.C = 10.0;
  cfg.ensemble_size = 3;
  cfg.out = ws / "model";
  const auto saved = run_train(cfg);
  EXPECT_EQ(saved.model.size(), 3);
  EXPECT_TRUE(fs::exists(ws / "model/manifest.json"));
  EXPECT_TRUE(fs::exists(ws / "model/base_002.json"));

  cfg.model = ws / "model";
  cfg.input = ws / "x.csv";
  cfg.truth = ws / "y.csv";
  cfg.out = ws / "pred";
  const auto preds = run_predict(cfg, "all");
  const LabelMatrix truth = csv::read_labels(ws / "y.csv", 2);
  ASSERT_EQ(preds.size(), 3u);
  for (const auto& [name, p] : preds) {
    EXPECT_EQ(p, truth) << name;
    EXPECT_EQ(csv::read_labels(ws / ("pred/predictions_" + name + ".csv"), 2), truth) << name;
  }
  const auto metrics = io::read_json(ws / "pred/metrics.json");
  EXPECT_EQ(metrics["mam"]["multilabel_accuracy"], 1.0);

  // Reloading reproduces the in-memory model's predictions.
  const auto loaded = io::load_ensemble(ws / "model");
  const auto rows = prediction_rows(loaded, csv::read_matrix(ws / "x.csv"));
  EXPECT_EQ(predict(loaded.model, Strategy::mam, rows), predict(saved.model, Strategy::mam, rows));
}

TEST(TrainPredict, InputErrors) {
  Workspace ws;
  write_separable(ws / "x.csv", ws / "y.csv", 20, 3, 5);
  ExperimentConfig cfg;
  cfg.features = ws / "x.csv";
  cfg.labels = ws / "y.csv";
  cfg.kernel = KernelKind::linear;
  cfg.max_passes = 5;
  cfg.out = ws / "model";
  run_train(cfg);
  cfg.model = ws / "model";
  cfg.out = ws / "pred";

  std::ofstream(ws / "wide.csv") << "1,2,3,4,5\n";
  cfg.input = ws / "wide.csv";
  EXPECT_THROW(run_predict(cfg), DataError);

  std::ofstream(ws / "empty.csv") << "";
  cfg.input = ws / "empty.csv";
  const auto preds = run_predict(cfg);
  ASSERT_EQ(preds.size(), 3u);
  EXPECT_EQ(preds.at("mam").rows(), 0);
  EXPECT_EQ(slurp(ws / "pred/predictions_mam.csv"), "");

  cfg.model = ws / "nothing";
  EXPECT_THROW(run_predict(cfg), DataError);
  cfg.model.clear();
  EXPECT_THROW(run_predict(cfg), ConfigError);
}

TEST(Diagnostics, SingleMemberHasNoGap) {
  Workspace ws;
  auto cfg = small_circle();
  cfg.ensemble_size = 1;
  cfg.out = ws / "data";
  run_gen_data(cfg);
  cfg.out = ws / "model";
  run_train(cfg);
  cfg.model = ws / "model";
  cfg.input = ws / "data/features.csv";
  cfg.truth = ws / "data/labels.csv";
  cfg.out = ws / "diag";
  cfg.diag_points = 5;
  const auto report = run_diag(cfg);
  ASSERT_EQ(report["records"].size(), 5u);
  for (const auto& r : report["records"]) {
    EXPECT_EQ(r["gap"].get<double>(), 0.0);
    EXPECT_EQ(r["diversity"].get<double>(), 0.0);
    EXPECT_EQ(r["coherence"].get<double>(), 0.0);
    EXPECT_EQ(r["y_source"], "truth");
  }
  EXPECT_TRUE(fs::exists(ws / "diag/diagnostics.json"));
}

TEST(Diagnostics, IdentityHoldsForLargerEnsembles) {
  Workspace ws;
  auto cfg = small_circle();
  cfg.ensemble_size = 5;
  cfg.out = ws / "data";
  run_gen_data(cfg);
  cfg.out = ws / "model";
  run_train(cfg);
  cfg.model = ws / "model";
  cfg.input = ws / "data/features.csv";
  cfg.out = ws / "diag";
  cfg.diag_points = 20;
  const auto report = run_diag(cfg);
  ASSERT_EQ(report["records"].size(), 20u);
  for (const auto& r : report["records"]) {
    const double gap = r["gap"], div = r["diversity"], coh = r["coherence"];
    EXPECT_NEAR(gap, div + coh, 1e-9 * std::max(1.0, std::abs(gap)));
    EXPECT_GE(div, 0.0);
    EXPECT_EQ(r["y_source"], "mam");
  }
  EXPECT_EQ(run_diag(cfg), report);
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(RGE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, ExitCodes) {
  Workspace ws;
  std::ofstream(ws / "cfg.json") << R"({"m": 40, "k": 3, "max_passes": 5, "n_folds": 2})";
  std::ofstream(ws / "bad.json") << R"({"m": 40, "bogus": 1})";
  const std::string cfg = " --config " + ws / "cfg.json";

  EXPECT_EQ(run_cli("gen-data" + cfg + " --out " + ws / "data"), 0);
  EXPECT_TRUE(fs::exists(ws / "data/features.csv"));
  EXPECT_EQ(run_cli("train" + cfg + " --ensemble-size 2 --slack 2 --out " + ws / "model"), 0);
  EXPECT_EQ(io::read_json(ws / "model/base_000.json")["C"], 2.0);
  EXPECT_EQ(run_cli("predict --model " + ws / "model" + " --input " + ws / "data/features.csv" + " --strategy mve --out " +
                    ws / "pred"),
            0);
  EXPECT_TRUE(fs::exists(ws / "pred/predictions.csv"));
  EXPECT_EQ(run_cli("cv" + cfg + " --ensemble-size 2 --strategy all --seed 3 --jobs 2 --out " + ws / "cv"), 0);
  EXPECT_EQ(io::read_json(ws / "cv/summary.json")["config"]["seed"], 3);
  EXPECT_EQ(run_cli("diag --model " + ws / "model" + " --input " + ws / "data/features.csv" + " --out " + ws / "diag"), 0);

  EXPECT_EQ(run_cli("cv --config " + ws / "bad.json" + " --out " + ws / "x"), 2);
  EXPECT_EQ(run_cli("cv" + cfg + " --strategy median --out " + ws / "x"), 2);
  EXPECT_EQ(run_cli("cv" + cfg + " --ensemble-size 0 --out " + ws / "x"), 2);
  EXPECT_EQ(run_cli("train --no-such-flag"), 2);
  EXPECT_EQ(run_cli("predict --model " + ws / "missing" + " --input " + ws / "data/features.csv" + " --out " + ws / "x"),
            3);
  std::ofstream(ws / "wide.csv") << "1,2\n";
  EXPECT_EQ(run_cli("predict --model " + ws / "model" + " --input " + ws / "wide.csv" + " --out " + ws / "x"), 3);
}

}  // namespace
}  // namespace rge
