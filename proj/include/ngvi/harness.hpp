#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ngvi/data.hpp"
#include "ngvi/optimizers.hpp"
#include "ngvi/theory.hpp"
#include "ngvi/oracles.hpp"

namespace ngvi::harness {

struct ExperimentConfig {
  std::string name = "experiment";
  // A dataset from the repository table, or "synthetic:quadratic-toy" /
  // "synthetic:logistic".
  std::string dataset = "synthetic:quadratic-toy";
  std::vector<Method> methods{Method::vn, Method::srvn, Method::bwgd};
  std::map<Method, double> step_sizes;
  double gamma = 1.0;
  double beta = 1e-2;
  bool nonconvex = false;

  bool random_mean = true;  // m0 ~ N(0, m0_scale^2 I) per seed, else m0 = 0
  double m0_scale = 1.0;
  double c0 = 1.0;

  OracleConfig oracle;
  long max_iters = 1000;
  double grad_tol = 1e-8;
  double fixed_point_tol = 1e-8;

  std::uint64_t seed = 0;  // base seed; run k uses seed + k
  int seeds = 1;

  // data handling
  Eigen::Index train_count = 0;  // 0 = table default
  std::uint64_t shuffle_seed = 0;
  bool scale = false;
  Eigen::Index subsample = 0;  // keep this many rows (seeded) before splitting

  // synthetic:logistic
  Eigen::Index synthetic_n = 200;
  Eigen::Index synthetic_d = 5;

  std::filesystem::path out = "runs/experiment";

  void validate() const;
  // Canonical key=value text covering everything that affects results
  // (the output directory is excluded).
  std::string canonical() const;
  std::string hash() const;
};

// Sections [experiment], [init], [steps], [oracle], [stop], [split],
// [synthetic]; see presets/ for complete examples.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config(std::istream& in);

// Reference step sizes and hyper-parameters for a repository dataset.
ExperimentConfig table_preset(const std::string& dataset);

// 2-D ill-conditioned quadratic used for the one-step illustration.
ProblemSpec quadratic_toy(double gamma = 1.0);

TestMetrics compute_test_metrics(const Vector& theta, const data::DesignMatrix& test);

struct SeedRuns {
  std::uint64_t seed;
  std::vector<RunRecord> records;  // one per configured method, same order
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<SeedRuns> runs;
  Eigen::Index train_rows = 0;
  Eigen::Index test_rows = 0;
  std::string manifest_digest = "none";
  std::string git_describe;
};

struct RunOptions {
  std::filesystem::path cache_dir;  // empty = data::default_cache_dir()
  bool offline = false;
  bool write_files = true;
  bool quiet = false;
};

// Builds the problem, runs seeds concurrently (methods sequentially within
// a seed) and emits files under cfg.out when requested.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});

// Writes runs/, summary.csv, summary.json, series/, timing/ and charts/.
// Everything outside timing/ and summary.json is a deterministic function
// of the configuration.
void write_outputs(const ExperimentResult& result, const std::filesystem::path& out);

// Series files (mean/min/max across seeds, gap-to-best for objective and
// test NLL) plus SVG charts, from records grouped by method.
void emit_plot_data(const std::map<Method, std::vector<RunRecord>>& records,
                    const std::filesystem::path& out);

// Re-reads runs/ and timing/ of a run directory.
std::map<Method, std::vector<RunRecord>> load_records(const std::filesystem::path& run_dir);

std::string git_describe();

// ---- verification suite ----

enum class CheckStatus { pass, fail, skipped };

struct CheckResult {
  std::string name;
  CheckStatus status;
  std::string detail;
  long instances = 0;
  long out_of_hypothesis = 0;
};

enum class VerifyLevel { fast, full };

struct VerificationReport {
  std::vector<CheckResult> checks;
  double seconds = 0.0;
  // 0 all pass; 1 a bound or consistency check failed; 2 no failures but
  // some sampled instances were outside the hypotheses and were skipped.
  int exit_code() const;
};

VerificationReport verify_suite(VerifyLevel level, std::ostream* log = nullptr);

// ---- individual checks (shared by verify_suite and the acceptance binary) ----

// Analytic mean/factor gradients against central differences of the
// objective: random quadratics (d <= 6, tol 1e-5) and logistic problems
// (d <= 4, n <= 50, quadrature oracle, tol 1e-3).
CheckResult check_gradients(std::uint64_t seed, int quadratics = 20, int logistics = 5);

// Natural-parameter update with rho = gamma = 1 on the 2-D regression toy
// lands on (A^{-1} b, A^{-1}) after one step.
CheckResult check_vn_one_step();

// One-step covariance gap between the natural-parameter and square-root
// updates is second order in rho.
CheckResult check_neumann_order(std::uint64_t seed, const TrilFn& tril = tril_half_diag);

// Per-iteration contraction of the square-root method with self-consistent
// constants and the rate-optimal step; iteration count vs the estimate.
CheckResult check_contraction(std::uint64_t seed);

// Exponential decay of the objective gap along the RK4-integrated flow on a
// 1-D quadratic.
CheckResult check_flow_rate();

// mv- and mc-parameterized flows agree on V; Euler-mc reproduces the
// square-root iterates bit for bit.
CheckResult check_flow_invariance(std::uint64_t seed);

// Randomized FIM-eigenvalue bound sweep. `tight` swaps the printed lower
// constant for lambda_min / 2.
CheckResult check_fim_bounds(int max_dim, long draws, std::uint64_t seed, bool tight);

// Randomized PL-inequality sweep on quadratics (printed or tight mu).
CheckResult check_pl_sweep(int max_dim, long draws, std::uint64_t seed, bool tight);

// Closed-form inverse FIM against a Monte-Carlo score estimate (d <= 3).
CheckResult check_mc_fim(long samples, std::uint64_t seed);

// FIM-based natural gradient equals the negated square-root direction.
// `fim_scale` lets mutation tests tamper with the closed-form prefactor.
CheckResult check_natural_direction(int max_dim, long draws, std::uint64_t seed,
                                    double fim_scale = 0.5);

// K, L, N identities on random matrices.
CheckResult check_vectorization(int max_dim, long draws, std::uint64_t seed);

// Square-root method with constant injected bias stagnates below the
// biased fixed-point bound, within a factor of 10.
CheckResult check_biased_plateau(std::uint64_t seed);

const char* check_status_name(CheckStatus s);

}  // namespace ngvi::harness
