#include "ngvi/ngflow.hpp"

#include <cmath>
#include <limits>

namespace ngvi {

void FlowConfig::validate() const {
  if (!(h > 0.0)) throw ConfigError("flow step h must be positive");
  if (!(horizon > 0.0) || !(h < horizon)) throw ConfigError("need 0 < h < T");
  if (record_every < 1) throw ConfigError("record_every must be >= 1");
  if (max_halvings < 0) throw ConfigError("max_halvings must be >= 0");
}

std::pair<Vector, Matrix> flow_rhs_mv(const Vector& mean, const Matrix& v,
                                      const MomentEstimates& mo, double gamma) {
  if (mo.dim() != mean.size() || v.rows() != mean.size()) {
    throw DimensionError("flow_rhs_mv: dimension mismatch");
  }
  const Matrix vh = v * mo.hess;
  Matrix dv = symmetrize(gamma * v - vh * v);
  return {-(v * mo.grad), std::move(dv)};
}

std::pair<Vector, Matrix> flow_rhs_mc(const GaussianParams& q, const MomentEstimates& mo,
                                      double gamma) {
  return srvn_direction(q, mo, gamma);
}

namespace {

struct Integrator {
  const ProblemSpec& problem;
  const OracleConfig& oracle;
  double gamma;

  // mc: state carried as GaussianParams.
  std::pair<Vector, Matrix> rhs(const GaussianParams& q) const {
    return flow_rhs_mc(q, compute_moments(q, problem, oracle), gamma);
  }
  std::pair<Vector, Matrix> rhs(const MeanCovariance& q) const {
    return flow_rhs_mv(q.mean, q.cov, compute_moments(q, problem, oracle), gamma);
  }

  static GaussianParams advance(const GaussianParams& q, const Vector& dm,
                                const Matrix& dc, double h) {
    return GaussianParams(q.mean() + h * dm, q.chol() + h * dc);
  }
  static MeanCovariance advance(const MeanCovariance& q, const Vector& dm,
                                const Matrix& dv, double h) {
    return MeanCovariance(q.mean + h * dm, q.cov + h * dv);
  }

  template <class S>
  S step(const S& q, double h, FlowScheme scheme) const {
    auto [m1, c1] = rhs(q);
    if (scheme == FlowScheme::euler) return advance(q, m1, c1, h);
    auto [m2, c2] = rhs(advance(q, m1, c1, 0.5 * h));
    auto [m3, c3] = rhs(advance(q, m2, c2, 0.5 * h));
    auto [m4, c4] = rhs(advance(q, m3, c3, h));
    const Vector dm = (m1 + 2.0 * m2 + 2.0 * m3 + m4) / 6.0;
    const Matrix dc = (c1 + 2.0 * c2 + 2.0 * c3 + c4) / 6.0;
    return advance(q, dm, dc, h);
  }
};

FlowState to_flow_state(const GaussianParams& q) {
  return FlowState{q.mean(), q.covariance(), q.chol()};
}

FlowState to_flow_state(const MeanCovariance& q) { return FlowState{q.mean, q.cov, {}}; }

double objective(const GaussianParams& q, const ProblemSpec& p, const OracleConfig& o) {
  return elbo(q, p, o);
}
double objective(const MeanCovariance& q, const ProblemSpec& p, const OracleConfig& o) {
  return elbo(q, p, o);
}

void check_spd(const MeanCovariance& q, double t) {
  if (Eigen::LLT<Matrix>(q.cov).info() != Eigen::Success) {
    throw IntegrationError("covariance left the SPD cone", t);
  }
}
void check_spd(const GaussianParams&, double) {}

template <class S>
FlowTrajectory run(const S& init, const ProblemSpec& problem, const OracleConfig& oracle,
                   const FlowConfig& cfg, double h, int record_every,
                   std::optional<double> l_star) {
  const Integrator integ{problem, oracle, problem.gamma};
  const long n_steps = std::lround(cfg.horizon / h);
  FlowTrajectory traj;
  traj.h_used = h;
  S state = init;
  double last_time = 0.0;
  const auto record = [&](long k) {
    traj.times.push_back(static_cast<double>(k) * h);
    traj.states.push_back(to_flow_state(state));
    if (l_star) traj.kl_gaps.push_back(objective(state, problem, oracle) - *l_star);
  };
  record(0);
  for (long k = 1; k <= n_steps; ++k) {
    try {
      state = integ.step(state, h, cfg.scheme);
      check_spd(state, last_time);
    } catch (const IntegrationError&) {
      throw;
    } catch (const Error& e) {
      throw IntegrationError(std::string("flow state invalid: ") + e.what(), last_time);
    }
    last_time = static_cast<double>(k) * h;
    if (k % record_every == 0 || k == n_steps) record(k);
  }
  return traj;
}

bool gaps_monotone(const std::vector<double>& gaps, double scale) {
  const double tol = 1e-12 * std::max(1.0, scale);
  for (std::size_t i = 1; i < gaps.size(); ++i) {
    if (gaps[i] > gaps[i - 1] + tol) return false;
  }
  return true;
}

}  // namespace

FlowTrajectory integrate_flow(const GaussianParams& init, const ProblemSpec& problem,
                              const OracleConfig& oracle, const FlowConfig& cfg,
                              std::optional<double> l_star) {
  cfg.validate();
  double h = cfg.h;
  int record_every = cfg.record_every;
  const bool check = l_star.has_value() && cfg.scheme == FlowScheme::rk4;
  for (int halvings = 0;; ++halvings) {
    FlowTrajectory traj =
        cfg.param == FlowParam::mc
            ? run(init, problem, oracle, cfg, h, record_every, l_star)
            : run(MeanCovariance(init), problem, oracle, cfg, h, record_every, l_star);
    traj.halvings = halvings;
    if (!check || gaps_monotone(traj.kl_gaps, std::abs(*l_star))) return traj;
    if (halvings == cfg.max_halvings) {
      traj.monotone = false;
      return traj;
    }
    h *= 0.5;
    record_every *= 2;
  }
}

DecayFit lyapunov_report(const FlowTrajectory& traj, const TheoryConstants& consts) {
  if (traj.kl_gaps.size() != traj.times.size() || traj.kl_gaps.empty()) {
    throw ConfigError("lyapunov_report needs a trajectory with recorded gaps");
  }
  DecayFit fit{0.0, -2.0 * consts.mu, true, 0.0, 0, false};
  const double gap0 = traj.kl_gaps.front();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < traj.times.size(); ++i) {
    const double t = traj.times[i];
    const double gap = traj.kl_gaps[i];
    if (gap <= kGapFloor) {
      fit.floor_warning = true;
      continue;
    }
    const double envelope = std::exp(-2.0 * consts.mu * t) * gap0;
    fit.worst_ratio = std::max(fit.worst_ratio, gap / envelope);
    if (gap > envelope * 1.05) fit.bound_satisfied = false;
    const double y = std::log(gap);
    sx += t;
    sy += y;
    sxx += t * t;
    sxy += t * y;
    ++fit.points_used;
  }
  if (fit.points_used >= 2) {
    const double n = fit.points_used;
    fit.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  } else {
    fit.slope = -std::numeric_limits<double>::infinity();
  }
  return fit;
}

double trajectory_lambda_min(const FlowTrajectory& traj) {
  double out = std::numeric_limits<double>::infinity();
  for (const auto& s : traj.states) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(s.cov, Eigen::EigenvaluesOnly);
    out = std::min(out, eig.eigenvalues().minCoeff());
  }
  return out;
}

}  // namespace ngvi
