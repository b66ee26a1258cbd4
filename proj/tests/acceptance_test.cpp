// Acceptance run: prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "rge/experiment.hpp"
#include "test_support.hpp"

namespace {

using namespace rge;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = true;
  std::string detail;
};

void require(Outcome& o, bool condition, const std::string& what) {
  if (!condition && o.pass) {
    o.pass = false;
    o.detail = what;
  }
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

int code_of(const Multilabel& y, const LabelSpace& space) {
  int code = 0;
  for (int j = 0; j < space.num_nodes(); ++j) code = code * space.size(j) + y[j];
  return code;
}

Outcome inference_oracle() {
  Outcome o;
  Rng rng(101);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 1 + static_cast<int>(rng.below(8));
    const auto g = random_spanning_tree(k, rng);
    const auto space = LabelSpace::binary(k);
    auto pot = EdgePotentials::zeros(g, space);
    for (auto& table : pot.tables)
      for (auto& v : table) v = trial % 2 ? rng.uniform(-2.0, 2.0) : static_cast<double>(rng.below(3));
    const auto d = map_decode(pot, g, space);
    const auto b = brute_force_decode(pot, g, space);
    require(o, d.labels == b.labels, "map_decode differs from enumeration at trial " + std::to_string(trial));
    worst = std::max(worst, std::abs(d.score - b.score));
    const auto mm = max_marginals(pot, g, space);
    const auto bm = brute_force_max_marginals(pot, g, space);
    worst = std::max(worst, (mm.values - bm.values).cwiseAbs().maxCoeff());
  }
  require(o, worst <= 1e-9, "score error " + fmt(worst));
  if (o.pass) o.detail = "200 trees, max score error " + fmt(worst);
  return o;
}

Outcome primal_dual_scores() {
  Outcome o;
  Rng rng(102);
  double worst = 0.0;
  for (int problem = 0; problem < 20; ++problem) {
    const int m = 1 + static_cast<int>(rng.below(4));
    const int k = 2 + static_cast<int>(rng.below(2));
    const int d = 1 + static_cast<int>(rng.below(4));
    const auto t = testing::random_toy(rng, m, k, d);
    const auto ys = testing::all_multilabels(t.space);
    const int n = static_cast<int>(ys.size());
    Eigen::MatrixXd alpha = Eigen::MatrixXd::Zero(m, n);
    TrainConfig cfg;
    cfg.C = 0.5 + 2.0 * rng.uniform();
    cfg.max_passes = 30;
    cfg.on_step = [&](const StepEvent& ev) {
      alpha.row(ev.example) *= 1.0 - ev.step;
      if (!ev.vertex->is_zero()) alpha(ev.example, code_of(*ev.vertex->labels, t.space)) += ev.step * ev.vertex->scale;
    };
    const auto model = train_base(t.kernel, t.y, t.space, t.graph, cfg);
    Eigen::VectorXd flat(m * n);
    for (int i = 0; i < m; ++i)
      for (int a = 0; a < n; ++a) flat(i * n + a) = alpha(i, a);
    const Eigen::VectorXd w = testing::difference_features(t, ys).transpose() * flat;
    const int stride = t.space.max_edge_size(t.graph);
    for (int probe = 0; probe < 4; ++probe) {
      Eigen::RowVectorXd x(d);
      for (int j = 0; j < d; ++j) x(j) = rng.uniform(-1.0, 1.0);
      const Eigen::RowVectorXd kx = x * t.x.transpose();
      for (int e = 0; e < t.graph.num_edges(); ++e) {
        for (int y_e = 0; y_e < stride; ++y_e) {
          const double primal = w.segment((e * stride + y_e) * d, d).dot(x.transpose());
          double dual = 0.0;
          for (int i = 0; i < m; ++i)
            for (int u = 0; u < stride; ++u) dual += model.mu(i, e, u) * joint_h(kx(i), model.train_edge_labels(i, e), u, y_e);
          worst = std::max(worst, std::abs(primal - dual));
        }
      }
    }
  }
  require(o, worst <= 1e-8, "primal/dual score error " + fmt(worst));
  if (o.pass) o.detail = "20 toys, max error " + fmt(worst);
  return o;
}

Outcome optimizer() {
  Outcome o;
  Rng rng(103);
  double worst_fd = 0.0;
  for (int problem = 0; problem < 10; ++problem) {
    const int m = 1 + static_cast<int>(rng.below(5));
    const auto t = testing::random_toy(rng, m, 2 + static_cast<int>(rng.below(3)), 3);
    const double C = 0.5 + 2.0 * rng.uniform();
    TrainConfig cfg;
    cfg.C = C;
    cfg.max_passes = 50;
    const auto model = train_base(t.kernel, t.y, t.space, t.graph, cfg);
    for (std::size_t p = 1; p < model.objective_log.size(); ++p) {
      require(o, model.objective_log[p] >= model.objective_log[p - 1], "objective decreased on toy " + std::to_string(problem));
    }
    require(o, feasibility_report(model.mu, C, t.graph, t.space).feasible(1e-9),
            "infeasible final duals on toy " + std::to_string(problem));

    const DualProblem dual(t.kernel.values, *t.y, t.graph, t.space, C);
    const auto ys = testing::all_multilabels(t.space);
    const int stride = t.space.max_edge_size(t.graph);
    for (int point = 0; point < 10; ++point) {
      const auto mu = testing::marginalize(testing::random_alpha(rng, m, static_cast<int>(ys.size()), C), ys, t.graph, t.space);
      for (int i = 0; i < m; ++i) {
        const auto g = dual.gradient_block(mu, i);
        for (int e = 0; e < t.graph.num_edges(); ++e) {
          for (int u = 0; u < stride; ++u) {
            const double h = 1e-5;
            auto plus = mu, minus = mu;
            plus(i, e, u) += h;
            minus(i, e, u) -= h;
            const double fd = (dual.objective(plus) - dual.objective(minus)) / (2 * h);
            const double exact = g[e * stride + u];
            worst_fd = std::max(worst_fd, std::abs(fd - exact) / std::max(1.0, std::abs(exact)));
          }
        }
      }
    }
  }
  require(o, worst_fd <= 1e-4, "gradient relative error " + fmt(worst_fd));
  if (o.pass) o.detail = "10 toys, monotone, feasible, gradient rel. error " + fmt(worst_fd);
  return o;
}

Outcome dual_equivalence() {
  Outcome o;
  Rng rng(104);
  double worst = 0.0;
  for (int problem = 0; problem < 5; ++problem) {
    const int m = 2 + static_cast<int>(rng.below(3));
    const auto t = testing::random_toy(rng, m, 2 + static_cast<int>(rng.below(2)), 2 + static_cast<int>(rng.below(3)));
    TrainConfig cfg;
    cfg.C = 1.0;
    cfg.max_passes = 200000;
    cfg.tolerance = 1e-13;
    const auto model = train_base(t.kernel, t.y, t.space, t.graph, cfg);
    const auto reference = testing::solve_enumerated_dual(t, cfg.C, 20000);
    worst = std::max(worst, std::abs(model.objective_log.back() - reference.value));
  }
  require(o, worst <= 1e-4, "objective gap " + fmt(worst));
  if (o.pass) o.detail = "5 toys, max objective gap " + fmt(worst);
  return o;
}

Outcome score_decomposition() {
  Outcome o;
  Rng rng(105);
  double worst = 0.0, lowest_gap = 0.0;
  for (int draw = 0; draw < 1000; ++draw) {
    const int T = 1 + static_cast<int>(rng.below(8));
    const int k = 1 + static_cast<int>(rng.below(10));
    Eigen::MatrixXd scores(T, k);
    for (int t = 0; t < T; ++t)
      for (int j = 0; j < k; ++j) scores(t, j) = rng.uniform(-3.0, 3.0);
    const auto d = gap_diagnostics(scores);
    const Eigen::VectorXd totals = scores.rowwise().sum();
    const double var = (totals.array() - totals.mean()).square().mean();
    worst = std::max({worst, std::abs(d.gap - var), std::abs(d.diversity + d.coherence - var)});
    lowest_gap = std::min(lowest_gap, d.gap);
  }
  require(o, worst <= 1e-9, "identity error " + fmt(worst));
  require(o, lowest_gap >= -1e-9, "negative gap " + fmt(lowest_gap));
  if (o.pass) o.detail = "1000 tensors, max identity error " + fmt(worst);
  return o;
}

struct CircleRun {
  std::uint64_t seed = 0;
  double base = 0.0, mam = 0.0, mam_t1 = 0.0;
};

std::vector<CircleRun> circle_runs;

double mean_accuracy(const CvReport& r, const std::string& strategy, int T) {
  double sum = 0.0;
  int n = 0;
  for (const auto& p : r.points) {
    if (p.strategy == strategy && p.T == T) {
      sum += p.metrics.microlabel_accuracy;
      ++n;
    }
  }
  return n ? sum / n : 0.0;
}

Outcome ensemble_trend() {
  Outcome o;
  auto cfg = load_config(RGE_SOURCE_DIR "/configs/circle10.json");
  cfg.strategy = "mam";
  cfg.ensemble_size = 16;
  cfg.n_folds = 5;
  cfg.jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  validate(cfg);
  for (std::uint64_t seed : {1, 2, 3}) {
    cfg.seed = seed;
    const auto ds = load_experiment_data(cfg);
    const auto kernel = compute_input_kernel(ds.inputs, cfg.kernel, cfg.normalize);
    const auto report = run_cv(cfg, ds, kernel);
    CircleRun run{seed, mean_accuracy(report, "base", 16), mean_accuracy(report, "mam", 16), mean_accuracy(report, "mam", 1)};
    circle_runs.push_back(run);
    std::printf("  seed %llu: base %.4f  MAM(T=1) %.4f  MAM(T=16) %.4f\n", static_cast<unsigned long long>(seed), run.base,
                run.mam_t1, run.mam);
    std::fflush(stdout);
    require(o, run.mam >= run.base, "MAM below base on seed " + std::to_string(seed));
    require(o, run.mam >= run.mam_t1, "MAM(T=16) below MAM(T=1) on seed " + std::to_string(seed));
  }
  if (o.pass) o.detail = "3 seeds, MAM >= base and MAM(16) >= MAM(1) on each";
  return o;
}

Outcome headline_band() {
  Outcome o;
  require(o, circle_runs.size() == 3, "Circle10 runs unavailable");
  double mean = 0.0;
  for (const auto& r : circle_runs) {
    mean += r.mam / static_cast<double>(circle_runs.size());
    require(o, r.mam >= 0.90, "MAM accuracy " + fmt(r.mam) + " on seed " + std::to_string(r.seed));
  }
  if (o.pass) o.detail = "MAM microlabel accuracy at T=16 >= 0.90 on every seed, mean " + fmt(mean);
  return o;
}

Outcome metrics_suite() {
  Outcome o;
  LabelMatrix p(1, 3), t(1, 3);
  p << 1, 0, 1;
  t << 1, 1, 1;
  const auto r = evaluate(p, t);
  require(o, r.microlabel_accuracy == 2.0 / 3.0, "microlabel accuracy " + fmt(r.microlabel_accuracy));
  require(o, r.multilabel_accuracy == 0.0, "multilabel accuracy " + fmt(r.multilabel_accuracy));
  require(o, r.micro_f1 && *r.micro_f1 == 0.8, "micro F1");
  const auto perfect = evaluate(t, t);
  require(o, perfect.microlabel_accuracy == 1.0 && perfect.multilabel_accuracy == 1.0 && perfect.micro_f1 == 1.0,
          "perfect prediction");
  const auto none = evaluate(LabelMatrix::Zero(2, 2), t.replicate(2, 1).leftCols(2));
  require(o, !none.micro_f1 && metrics_to_json(none)["micro_f1"] == "-", "F1 sentinel");

  Rng rng(108);
  for (int trial = 0; trial < 100; ++trial) {
    const int m = 5 + static_cast<int>(rng.below(200));
    const int k = 1 + static_cast<int>(rng.below(8));
    const int n_folds = 2 + static_cast<int>(rng.below(std::min(9, m - 1)));
    LabelMatrix y(m, k);
    const double q = rng.uniform();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < k; ++j) y(i, j) = rng.uniform() < q ? 1 : 0;
    const auto folds = stratified_folds(y, n_folds, static_cast<std::uint64_t>(trial));
    std::map<long, std::vector<int>> counts;
    for (int i = 0; i < m; ++i) {
      auto& c = counts[(y.row(i).array() == 1).count()];
      c.resize(static_cast<std::size_t>(n_folds), 0);
      ++c[folds[i]];
    }
    for (const auto& [card, c] : counts) {
      require(o, *std::max_element(c.begin(), c.end()) - *std::min_element(c.begin(), c.end()) <= 1,
              "unbalanced folds in trial " + std::to_string(trial));
    }
  }
  if (o.pass) o.detail = "hand examples exact, 100 fold-balance trials";
  return o;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism() {
  Outcome o;
  const fs::path dir = fs::temp_directory_path() / "rge_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "cfg.json") << R"({"m": 200, "k": 6, "C": 10, "max_passes": 30, "ensemble_size": 4, "n_folds": 3})";
  for (const char* run : {"a", "b"}) {
    const std::string cmd = std::string(RGE_CLI_PATH) + " cv --config " + (dir / "cfg.json").string() +
                            " --seed 7 --out " + (dir / run).string() + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    require(o, WIFEXITED(status) && WEXITSTATUS(status) == 0, std::string("cv run ") + run + " failed");
  }
  for (const char* file : {"summary.json", "learning_curve.csv"}) {
    const auto a = slurp(dir / "a" / file), b = slurp(dir / "b" / file);
    require(o, !a.empty() && a == b, std::string(file) + " differs between runs");
  }
  fs::remove_all(dir);
  if (o.pass) o.detail = "summary.json and learning_curve.csv byte-identical";
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"inference matches enumeration", inference_oracle},
      {"primal and marginal-dual scores agree", primal_dual_scores},
      {"optimizer monotone, feasible, exact gradient", optimizer},
      {"marginal dual optimum equals enumerated dual optimum", dual_equivalence},
      {"ensemble gap decomposition", score_decomposition},
      {"Circle10 ensemble trend", ensemble_trend},
      {"Circle10 MAM accuracy band", headline_band},
      {"evaluation metrics and fold balance", metrics_suite},
      {"cv determinism", determinism},
  };
  int failures = 0;
  for (std::size_t c = 0; c < criteria.size(); ++c) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[c].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s %zu %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", c + 1, criteria[c].first.c_str(), o.detail.c_str(),
                secs);
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
