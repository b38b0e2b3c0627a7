#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ngvi/gaussian.hpp"
#include "ngvi/oracles.hpp"

namespace ngvi {

enum class Method { gd, vn, srvn, bwgd };

const char* method_name(Method m);
Method parse_method(const std::string& name);

struct StepConfig {
  double rho = 1e-2;
  double gamma = 1.0;
  long max_iters = 1000;
  double grad_tol = 1e-8;
  double fixed_point_tol = 1e-8;

  void validate() const;
};

// Assumption constants and the quantities derived from them. The lower FIM
// bound keeps the printed form min{lambda_min, lambda_min^2/2}; see
// fim_tight_lower_bound for the bound that actually holds when
// lambda_min > 1.
struct TheoryConstants {
  double delta;
  double M;
  double lambda_min;
  double xi_l;
  double xi_u;
  // derived
  double lambda_g_min;
  double lambda_g_max;
  double mu;
  double rho1;
  double rho2;

  static TheoryConstants make(double delta, double M, double lambda_min, double xi_l,
                              double xi_u);
  double lambda_max() const { return xi_u * xi_u; }
};

// lambda_min / 2: min eigenvalue of the C-block of F^{-1} over all C with
// lambda_min(CC^T) = lambda_min. Coincides with the printed bound only for
// lambda_min <= 1.
double fim_tight_lower_bound(double lambda_min);

double omega_m(const TheoryConstants& c, double rho);
double omega_c(const TheoryConstants& c, double rho);
// eta(rho) = min{-omega_m, -omega_c}.
double eta_at(const TheoryConstants& c, double rho);

struct StepSizeChoice {
  double rho1;
  double rho2;
  double rho;
  double eta;
  double contraction;  // 1 - 2 eta delta
};

// rho = max{rho1, rho2} with eta evaluated there. Valid for gamma = 1.
// Throws TheoryViolation when the contraction leaves (0, 1).
StepSizeChoice permissible_step(const TheoryConstants& c);

// The rho <= max{rho1, rho2} that maximizes eta. Both quadratics are
// concave, so the maximizer is rho1, rho2 or their crossing point.
StepSizeChoice rate_optimal_step(const TheoryConstants& c);

// Iterations to reach gap eps from gap0, using the per-branch rates
// (delta/M) lambda_min^2 / lambda_max^2 and (delta/M) xi_l^4 / xi_u^4.
double iteration_estimate(const TheoryConstants& c, double gap0, double eps);

// Additive term of the biased-oracle bound exactly as printed:
// omega_m zeta_g^2 + omega_c zeta_h^2 (negative whenever eta > 0).
double biased_additive_term(const TheoryConstants& c, double rho, double zeta_g,
                            double zeta_h);
// Fixed point of the per-step biased recursion
// gap_{t+1} <= (1 - 2 eta delta) gap_t + |omega_m| zeta_g^2 + |omega_c| zeta_h^2.
double biased_plateau_bound(const TheoryConstants& c, double rho, double zeta_g,
                            double zeta_h);

// Largest eigenvalue of X^T X by power iteration (relative tol 1e-8).
double lambda_max_xtx(const data::DesignMatrix& dm, double tol = 1e-8,
                      int max_iter = 10000);

// (delta, M): eigen-range of A for quadratics; (beta, lambda_max(X^T X)/4
// + beta) for logistic losses.
std::pair<double, double> curvature_bounds(const ProblemSpec& spec);

// ---- updates ----

// GD in (m, C): C - rho lower[(H - gamma V^{-1}) C], m - rho g.
GaussianParams gd_step(const GaussianParams& q, const MomentEstimates& mo,
                       const StepConfig& cfg);

// Natural-parameter update: S+ = (1 - gamma rho) S + rho H,
// m+ = m - rho S+^{-1} g.
NaturalState vn_step(const NaturalState& s, const MomentEstimates& mo,
                     const StepConfig& cfg);

// Square-root update direction: (-C C^T g, C tril[gamma I - C^T H C]).
std::pair<Vector, Matrix> srvn_direction(const GaussianParams& q,
                                         const MomentEstimates& mo, double gamma);

// q + rho * srvn_direction.
GaussianParams srvn_step(const GaussianParams& q, const MomentEstimates& mo,
                         const StepConfig& cfg);

// m - alpha g;  V <- M V M with M = I - alpha (H - V^{-1}).
MeanCovariance bwgd_step(const MeanCovariance& q, const MomentEstimates& mo,
                         double alpha);

// ---- run loop ----

struct IterationRow {
  long iter;
  double wall_ms;  // cumulative oracle + update time
  double neg_elbo;
  double grad_norm;
  double c_frob;  // |C|_F = sqrt(tr V)
  double v_eig_min;
  double v_eig_max;
  double test_nll;  // NaN unless a metrics hook is set
  double test_accuracy;
};

enum class RunStatus { converged, max_iters, aborted };
const char* status_name(RunStatus s);

struct RunRecord {
  Method method = Method::srvn;
  std::vector<IterationRow> rows;
  RunStatus status = RunStatus::max_iters;
  std::string abort_message;
  long abort_iteration = -1;
  Vector final_mean;
  Matrix final_cov;
  // |g| and |H - gamma V^{-1}|_F at the last recorded state.
  double final_grad_norm = 0.0;
  double final_fixed_point_residual = 0.0;

  long iterations() const { return rows.empty() ? 0 : rows.back().iter; }
  bool converged() const { return status == RunStatus::converged; }
};

struct TestMetrics {
  double nll_sum;
  double nll_mean;
  double accuracy;
};

struct RunHooks {
  // Evaluated on the mean at every recorded row when set.
  std::function<TestMetrics(const Vector&)> mean_metrics;
  // Whether to evaluate the objective at each row (costs an oracle pass).
  bool record_elbo = true;
};

RunRecord run_optimizer(Method method, const GaussianParams& init,
                        const ProblemSpec& problem, const OracleConfig& oracle,
                        const StepConfig& step, const RunHooks& hooks = {});

// Empirical Assumption-4 band over a recorded trajectory.
struct EmpiricalBounds {
  double lambda_min;
  double xi_l;
  double xi_u;
};
EmpiricalBounds empirical_bounds(const RunRecord& rec);

// Constants from a short GD pilot run (default 20 iterations) on the
// problem's curvature bounds.
TheoryConstants pilot_constants(const ProblemSpec& problem, const GaussianParams& init,
                                const OracleConfig& oracle, double pilot_rho,
                                long pilot_iters = 20);

// Self-consistent constants for an SR-VN run: start from the initial state,
// choose rho by rate_optimal_step, run, re-read lambda_min, xi_l, xi_u from
// the trajectory and repeat until the band stops changing.
struct CertifiedRun {
  TheoryConstants constants;
  StepSizeChoice step;
  RunRecord record;
  int rounds;
};
CertifiedRun certify_srvn_constants(const ProblemSpec& problem, const GaussianParams& init,
                                    const OracleConfig& oracle, const StepConfig& base,
                                    int max_rounds = 20);

}  // namespace ngvi
