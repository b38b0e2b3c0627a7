#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "ngvi/gaussian.hpp"
#include "ngvi/optimizers.hpp"
#include "ngvi/oracles.hpp"

namespace ngvi {

enum class FlowParam { mv, mc };
enum class FlowScheme { euler, rk4 };

struct FlowConfig {
  FlowParam param = FlowParam::mc;
  FlowScheme scheme = FlowScheme::rk4;
  double h = 1e-3;
  double horizon = 1.0;
  int record_every = 1;
  // Automatic step halvings allowed when the objective gap increases
  // along an RK4 trajectory.
  int max_halvings = 3;

  void validate() const;
};

struct FlowState {
  Vector mean;
  Matrix cov;
  std::optional<Matrix> chol;  // set for the mc parameterization
};

struct FlowTrajectory {
  std::vector<double> times;
  std::vector<FlowState> states;
  std::vector<double> kl_gaps;  // L(tau_t) - L*, empty when L* is not given
  double h_used = 0.0;
  int halvings = 0;
  bool monotone = true;  // gap never increased beyond round-off
};

// dV = gamma V - V H V, dm = -V g.
std::pair<Vector, Matrix> flow_rhs_mv(const Vector& mean, const Matrix& v,
                                      const MomentEstimates& mo, double gamma = 1.0);

// dC = C tril[gamma I - C^T H C], dm = -C C^T g.
std::pair<Vector, Matrix> flow_rhs_mc(const GaussianParams& q, const MomentEstimates& mo,
                                      double gamma = 1.0);

// Integrates the flow from `init`. Euler in mc with h = rho reproduces the
// square-root iterates bit for bit (same direction routine).
FlowTrajectory integrate_flow(const GaussianParams& init, const ProblemSpec& problem,
                              const OracleConfig& oracle, const FlowConfig& cfg,
                              std::optional<double> l_star = std::nullopt);

struct DecayFit {
  double slope;        // least-squares slope of log(gap) against t
  double bound_slope;  // -2 mu
  bool bound_satisfied;
  double worst_ratio;  // max_t gap(t) / (exp(-2 mu t) gap(0))
  int points_used;
  bool floor_warning;  // some gap <= 1e-13 was excluded
};

inline constexpr double kGapFloor = 1e-13;

// Rate check against exp(-2 mu t) with 5% slack; gaps are those recorded
// by integrate_flow.
DecayFit lyapunov_report(const FlowTrajectory& traj, const TheoryConstants& consts);

// min_t lambda_min(V_t) over the recorded states.
double trajectory_lambda_min(const FlowTrajectory& traj);

}  // namespace ngvi
