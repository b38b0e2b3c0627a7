#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "ngvi/harness.hpp"

using namespace ngvi;
using namespace ngvi::harness;
namespace fs = std::filesystem;

namespace {

ExperimentConfig parse_text(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("ngvi-test-harness-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

ExperimentConfig small_logistic(const fs::path& out) {
  ExperimentConfig c = load_config(fs::path(NGVI_PRESET_DIR) / "synthetic-logistic.ini");
  c.max_iters = 40;
  c.seeds = 2;
  c.out = out;
  return c;
}

// Relative paths of all files below `root`, excluding the timing/ tree and
// the JSON summary (wall-clock content).
std::vector<fs::path> deterministic_files(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), root);
    if (*rel.begin() == "timing" || rel == "summary.json") continue;
    files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

TEST_CASE("config parsing") {
  const ExperimentConfig c = parse_text(
      "[experiment]\nname = t\ndataset = synthetic:quadratic-toy\nmethods = vn, bwgd\n"
      "max_iters = 17\nseeds = 3\nseed = 9\n[steps]\nvn = 0.5\nbwgd = 0.01\n"
      "[init]\nmean = zero\nc0 = 2\n[oracle]\nquadrature_nodes = 32\n");
  CHECK(c.name == "t");
  REQUIRE(c.methods.size() == 2);
  CHECK(c.methods[0] == Method::vn);
  CHECK(c.methods[1] == Method::bwgd);
  CHECK(c.max_iters == 17);
  CHECK(c.seeds == 3);
  CHECK(c.seed == 9);
  CHECK(c.step_sizes.at(Method::vn) == 0.5);
  CHECK_FALSE(c.random_mean);
  CHECK(c.c0 == 2.0);
  CHECK(c.oracle.quadrature_nodes == 32);
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(parse_text("[experiment]\nbogus = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_text("[nosuch]\nx = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_text("[experiment]\nmax_iters = ten\n"), ConfigError);
  CHECK_THROWS_AS(parse_text("[experiment]\nmethods = vn, adam\n"), ConfigError);
  CHECK_THROWS_AS(parse_text("[experiment]\nmethods = vn\n[steps]\nvn = -1\n"), ConfigError);
  CHECK_THROWS_AS(parse_text("[experiment]\ndataset = iris\n"), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.ini"), ConfigError);
}

TEST_CASE("every shipped preset loads and validates") {
  int count = 0;
  for (const auto& e : fs::directory_iterator(NGVI_PRESET_DIR)) {
    if (e.path().extension() != ".ini") continue;
    CAPTURE(e.path().string());
    const ExperimentConfig c = load_config(e.path());
    CHECK_NOTHROW(c.validate());
    for (Method m : c.methods) CHECK(c.step_sizes.count(m) == 1);
    ++count;
  }
  CHECK(count >= 10);
}

TEST_CASE("dataset presets carry the table settings") {
  const ExperimentConfig d = table_preset("diabetes-scale");
  CHECK(d.train_count == 614);
  CHECK(d.step_sizes.count(Method::vn) == 1);
  CHECK(d.step_sizes.count(Method::srvn) == 1);
  CHECK(d.step_sizes.count(Method::bwgd) == 1);
  CHECK(d.beta > 0.0);
  CHECK_THROWS_AS(table_preset("iris"), ConfigError);
}

TEST_CASE("configuration hash ignores the output directory only") {
  ExperimentConfig a = parse_text("[experiment]\nout = a\nmethods = vn\n[steps]\nvn = 1\n");
  ExperimentConfig b = parse_text("[experiment]\nout = b\nmethods = vn\n[steps]\nvn = 1\n");
  CHECK(a.hash() == b.hash());
  CHECK(a.hash().size() == 16);
  b.max_iters += 1;
  CHECK(a.hash() != b.hash());
}

TEST_CASE("test metrics") {
  Eigen::MatrixXd x(4, 2);
  x << 1, 0, 0, 1, -1, 0, 0, -1;
  Eigen::VectorXd y(4);
  y << 1, 1, -1, 1;
  const data::DesignMatrix dm = data::DesignMatrix::from_dense(x, y);
  const TestMetrics zero = compute_test_metrics(Vector::Zero(2), dm);
  CHECK(zero.nll_mean == doctest::Approx(std::log(2.0)));
  CHECK(zero.nll_sum == doctest::Approx(4 * std::log(2.0)));
  CHECK(zero.accuracy == doctest::Approx(0.75));  // ties go to +1

  Eigen::MatrixXd xs(2, 1);
  xs << 1, -1;
  const data::DesignMatrix sep = data::DesignMatrix::from_dense(xs, Eigen::Vector2d(1, -1));
  const TestMetrics m = compute_test_metrics(Vector::Constant(1, 20.0), sep);
  CHECK(m.accuracy == 1.0);
  CHECK(m.nll_sum < 1e-8);
}

TEST_CASE("quadratic toy geometry") {
  const ProblemSpec p = quadratic_toy();
  Eigen::SelfAdjointEigenSolver<Matrix> es(p.quadratic().a);
  CHECK(es.eigenvalues()(0) == doctest::Approx(0.5));
  CHECK(es.eigenvalues()(1) == doctest::Approx(10.0));
}

TEST_CASE("synthetic runs are deterministic and write the documented layout") {
  TempDir tmp;
  RunOptions opts;
  opts.quiet = true;
  const ExperimentResult r1 = run_experiment(small_logistic(tmp.path / "a"), opts);
  const ExperimentResult r2 = run_experiment(small_logistic(tmp.path / "b"), opts);
  REQUIRE(r1.runs.size() == 2);
  CHECK(r1.train_rows == 240);
  CHECK(r1.test_rows == 60);
  for (const auto& sr : r1.runs) {
    REQUIRE(sr.records.size() == 3);
    for (const auto& rec : sr.records) CHECK(rec.status != RunStatus::aborted);
  }

  const auto files = deterministic_files(tmp.path / "a");
  CHECK(files == deterministic_files(tmp.path / "b"));
  for (const auto& f : files) {
    CAPTURE(f.string());
    CHECK(slurp(tmp.path / "a" / f) == slurp(tmp.path / "b" / f));
  }
  for (const char* p : {"summary.csv", "summary.json", "config.txt", "runs/srvn_seed1.csv",
                        "runs/srvn_seed2.csv", "timing/summary.csv", "timing/vn_seed1.csv",
                        "series/neg_elbo_gap_iteration_vn.csv", "charts/neg_elbo_gap_iteration.svg",
                        "timing/series/neg_elbo_gap_seconds_bwgd.csv",
                        "timing/charts/test_nll_gap_seconds.svg"}) {
    CAPTURE(p);
    CHECK(fs::exists(tmp.path / "a" / p));
  }

  // Every summary row carries the provenance columns.
  std::istringstream summary(slurp(tmp.path / "a" / "summary.csv"));
  std::string line;
  std::getline(summary, line);
  CHECK(line.find("config_hash,git_describe,manifest_digest") != std::string::npos);
  int rows = 0;
  const std::string hash = r1.config.hash();
  while (std::getline(summary, line)) {
    ++rows;
    CHECK(line.find(hash) != std::string::npos);
  }
  CHECK(rows == 6);

  // Gap-to-best series reach zero at the best value and never go negative.
  double min_gap = 1e300;
  for (const char* m : {"vn", "srvn", "bwgd"}) {
    std::istringstream s(slurp(tmp.path / "a" / "series" / (std::string("neg_elbo_gap_iteration_") + m + ".csv")));
    std::getline(s, line);
    CHECK(line == "iter,mean,min,max");
    int n = 0;
    while (std::getline(s, line)) {
      ++n;
      std::vector<double> v;
      std::stringstream ls(line);
      std::string cell;
      while (std::getline(ls, cell, ',')) v.push_back(std::stod(cell));
      REQUIRE(v.size() == 4);
      CHECK(v[2] >= 0.0);
      CHECK(v[2] <= v[1] + 1e-12);
      CHECK(v[1] <= v[3] + 1e-12);
      min_gap = std::min(min_gap, v[2]);
    }
    CHECK(n == 41);
  }
  CHECK(min_gap == 0.0);
}

TEST_CASE("records round-trip through the run directory") {
  TempDir tmp;
  ExperimentConfig c = small_logistic(tmp.path / "r");
  c.seeds = 1;
  RunOptions opts;
  opts.quiet = true;
  const ExperimentResult r = run_experiment(c, opts);
  const auto loaded = load_records(tmp.path / "r");
  REQUIRE(loaded.size() == 3);
  for (const RunRecord& rec : r.runs[0].records) {
    const auto& back = loaded.at(rec.method);
    REQUIRE(back.size() == 1);
    REQUIRE(back[0].rows.size() == rec.rows.size());
    for (std::size_t i = 0; i < rec.rows.size(); ++i) {
      CHECK(back[0].rows[i].iter == rec.rows[i].iter);
      CHECK(back[0].rows[i].neg_elbo == rec.rows[i].neg_elbo);
      CHECK(back[0].rows[i].test_nll == rec.rows[i].test_nll);
    }
  }
  // With a single seed the envelope collapses onto the mean.
  std::istringstream s(slurp(tmp.path / "r" / "series" / "test_accuracy_iteration_srvn.csv"));
  std::string line;
  std::getline(s, line);
  while (std::getline(s, line)) {
    std::stringstream ls(line);
    std::string a, mean, lo, hi;
    std::getline(ls, a, ',');
    std::getline(ls, mean, ',');
    std::getline(ls, lo, ',');
    std::getline(ls, hi, ',');
    CHECK(mean == lo);
    CHECK(mean == hi);
  }
  CHECK_THROWS(load_records(tmp.path / "missing"));
}

TEST_CASE("series pad seeds that stop early with their last value") {
  TempDir tmp;
  auto make = [](long n, double base) {
    RunRecord r;
    r.method = Method::vn;
    for (long i = 0; i <= n; ++i) {
      r.rows.push_back({i, double(i), base + double(n - i), 1.0, 1.0, 1.0, 1.0,
                        std::nan(""), std::nan("")});
    }
    return r;
  };
  std::map<Method, std::vector<RunRecord>> recs{{Method::vn, {make(2, 0.0), make(4, 0.0)}}};
  emit_plot_data(recs, tmp.path);
  std::istringstream s(slurp(tmp.path / "series" / "neg_elbo_gap_iteration_vn.csv"));
  std::string line;
  std::getline(s, line);
  std::vector<std::string> lines;
  while (std::getline(s, line)) lines.push_back(line);
  REQUIRE(lines.size() == 5);
  CHECK(lines.back() == "4,0,0,0");
  CHECK(lines[3] == "3,0.5,0,1");
  CHECK_FALSE(fs::exists(tmp.path / "series" / "test_nll_gap_iteration_vn.csv"));
  CHECK_THROWS_AS(emit_plot_data({}, tmp.path), ConfigError);
}

TEST_CASE("verification report exit codes") {
  VerificationReport r;
  r.checks.push_back({"a", CheckStatus::pass, "", 1, 0});
  CHECK(r.exit_code() == 0);
  r.checks.push_back({"b", CheckStatus::pass, "", 10, 2});
  CHECK(r.exit_code() == 2);
  r.checks.push_back({"c", CheckStatus::fail, "", 1, 0});
  CHECK(r.exit_code() == 1);
  CHECK(std::string(check_status_name(CheckStatus::skipped)) == "SKIP");
}

TEST_CASE("individual fast checks") {
  CHECK(check_vn_one_step().status == CheckStatus::pass);
  CHECK(check_gradients(3, 4, 2).status == CheckStatus::pass);
  CHECK(check_neumann_order(3).status == CheckStatus::pass);
  CHECK(check_vectorization(4, 10, 3).status == CheckStatus::pass);
  CHECK(check_natural_direction(4, 10, 3).status == CheckStatus::pass);
  CHECK(check_flow_invariance(3).status == CheckStatus::pass);
  // Mutations are caught.
  CHECK(check_natural_direction(3, 10, 3, 1.0).status == CheckStatus::fail);
  CHECK(check_neumann_order(3, [](const Matrix& x) { return Matrix(x.triangularView<Eigen::Lower>()); })
            .status == CheckStatus::fail);
  // Tight constants hold; the sweeps with the printed constants are exercised
  // by the acceptance binary.
  CHECK(check_fim_bounds(4, 50, 3, true).status == CheckStatus::pass);
  CHECK(check_pl_sweep(4, 50, 3, true).status == CheckStatus::pass);
}
