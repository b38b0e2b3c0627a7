#include "ngvi/optimizers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace ngvi {

const char* method_name(Method m) {
  switch (m) {
    case Method::gd: return "gd";
    case Method::vn: return "vn";
    case Method::srvn: return "srvn";
    case Method::bwgd: return "bwgd";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  if (name == "gd") return Method::gd;
  if (name == "vn") return Method::vn;
  if (name == "srvn" || name == "sr-vn") return Method::srvn;
  if (name == "bwgd" || name == "bw-gd") return Method::bwgd;
  throw ConfigError("unknown method '" + name + "'");
}

const char* status_name(RunStatus s) {
  switch (s) {
    case RunStatus::converged: return "converged";
    case RunStatus::max_iters: return "max_iters";
    case RunStatus::aborted: return "aborted";
  }
  return "?";
}

void StepConfig::validate() const {
  if (!(rho > 0.0)) throw ConfigError("step size rho must be positive");
  if (!(gamma > 0.0)) throw ConfigError("temperature gamma must be positive");
  if (!(grad_tol > 0.0) || !(fixed_point_tol > 0.0)) {
    throw ConfigError("tolerances must be positive");
  }
  if (max_iters < 0) throw ConfigError("max_iters must be >= 0");
}

// ---------------------------------------------------------------- constants

TheoryConstants TheoryConstants::make(double delta, double M, double lambda_min,
                                      double xi_l, double xi_u) {
  if (!(delta > 0.0) || !(delta <= M)) throw ConfigError("need 0 < delta <= M");
  if (!(xi_l > 0.0) || !(xi_l <= xi_u)) throw ConfigError("need 0 < xi_l <= xi_u");
  if (!(lambda_min > 0.0)) throw ConfigError("need lambda_min > 0");
  TheoryConstants c{delta, M, lambda_min, xi_l, xi_u, 0, 0, 0, 0, 0};
  c.lambda_g_min = std::min(lambda_min, 0.5 * lambda_min * lambda_min);
  c.lambda_g_max = xi_u * xi_u;
  c.mu = delta * c.lambda_g_min;
  const double xu4 = std::pow(xi_u, 4);
  c.rho1 = lambda_min / (c.lambda_max() * c.lambda_max() * M);
  c.rho2 = std::sqrt(2.0 / 5.0) * xi_l * xi_l / (M * xu4);
  return c;
}

double fim_tight_lower_bound(double lambda_min) { return 0.5 * lambda_min; }

double omega_m(const TheoryConstants& c, double rho) {
  return 0.5 * c.M * rho * rho * std::pow(c.xi_u, 4) - c.lambda_min * rho;
}

double omega_c(const TheoryConstants& c, double rho) {
  return 1.25 * rho * rho * std::pow(c.xi_u, 4) * c.M -
         std::sqrt(2.5) * rho * c.xi_l * c.xi_l;
}

double eta_at(const TheoryConstants& c, double rho) {
  return std::min(-omega_m(c, rho), -omega_c(c, rho));
}

namespace {

StepSizeChoice finish_choice(const TheoryConstants& c, double rho, const char* rule) {
  StepSizeChoice s{c.rho1, c.rho2, rho, eta_at(c, rho), 0.0};
  s.contraction = 1.0 - 2.0 * s.eta * c.delta;
  if (!(s.contraction > 0.0 && s.contraction < 1.0)) {
    throw TheoryViolation(std::string(rule) + ": contraction 1 - 2 eta delta = " +
                          std::to_string(s.contraction) + " outside (0,1) (rho = " +
                          std::to_string(rho) + ", eta = " + std::to_string(s.eta) + ")");
  }
  return s;
}

}  // namespace

StepSizeChoice permissible_step(const TheoryConstants& c) {
  return finish_choice(c, std::max(c.rho1, c.rho2), "permissible_step");
}

StepSizeChoice rate_optimal_step(const TheoryConstants& c) {
  const double cap = std::max(c.rho1, c.rho2);
  std::vector<double> candidates{std::min(c.rho1, cap), std::min(c.rho2, cap)};
  // Crossing of -omega_m and -omega_c: rho (s - l) = rho^2 (q - p).
  const double a = 0.5 * c.M * std::pow(c.xi_u, 4);
  const double q = 1.25 * c.M * std::pow(c.xi_u, 4);
  const double s = std::sqrt(2.5) * c.xi_l * c.xi_l;
  const double cross = (s - c.lambda_min) / (q - a);
  if (cross > 0.0 && cross <= cap) candidates.push_back(cross);
  double best = candidates.front();
  for (double r : candidates) {
    if (eta_at(c, r) > eta_at(c, best)) best = r;
  }
  return finish_choice(c, best, "rate_optimal_step");
}

double iteration_estimate(const TheoryConstants& c, double gap0, double eps) {
  const double num = std::log(eps / gap0);
  const double ratio = c.delta / c.M;
  const double lm = c.lambda_min / c.lambda_max();
  const double t1 = num / std::log1p(-ratio * lm * lm);
  const double t2 = num / std::log1p(-ratio * std::pow(c.xi_l / c.xi_u, 4));
  return std::min(t1, t2);
}

double biased_additive_term(const TheoryConstants& c, double rho, double zeta_g,
                            double zeta_h) {
  return omega_m(c, rho) * zeta_g * zeta_g + omega_c(c, rho) * zeta_h * zeta_h;
}

double biased_plateau_bound(const TheoryConstants& c, double rho, double zeta_g,
                            double zeta_h) {
  const double eta = eta_at(c, rho);
  if (!(eta > 0.0)) {
    throw TheoryViolation("biased plateau bound needs eta > 0");
  }
  const double drive = std::abs(omega_m(c, rho)) * zeta_g * zeta_g +
                       std::abs(omega_c(c, rho)) * zeta_h * zeta_h;
  return drive / (2.0 * eta * c.delta);
}

double lambda_max_xtx(const data::DesignMatrix& dm, double tol, int max_iter) {
  const Eigen::Index d = dm.cols();
  Vector v = Vector::Constant(d, 1.0 / std::sqrt(static_cast<double>(d)));
  double lambda = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    const Vector xv = dm.x() * v;
    Vector w = dm.x().transpose() * xv;
    const double next = v.dot(w);
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    v = w / norm;
    if (std::abs(next - lambda) <= tol * std::abs(next)) return next;
    lambda = next;
  }
  return lambda;
}

std::pair<double, double> curvature_bounds(const ProblemSpec& spec) {
  if (spec.is_quadratic()) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(spec.quadratic().a, Eigen::EigenvaluesOnly);
    return {eig.eigenvalues().minCoeff(), eig.eigenvalues().maxCoeff()};
  }
  const auto& lg = spec.logistic();
  return {lg.beta, lambda_max_xtx(*lg.data) / 4.0 + lg.beta};
}

// ---------------------------------------------------------------- updates

namespace {

void check_moments(Eigen::Index d, const MomentEstimates& mo) {
  if (mo.dim() != d) throw DimensionError("moments do not match state dimension");
}

void check_diagonal(const Matrix& c, const char* method) {
  for (Eigen::Index i = 0; i < c.rows(); ++i) {
    if (!(c(i, i) > kDiagonalFloor)) {
      throw StepSizeError(std::string(method) + ": Cholesky diagonal entry " +
                              std::to_string(i) + " became " + std::to_string(c(i, i)) +
                              "; step size too large",
                          static_cast<std::size_t>(i));
    }
  }
}

}  // namespace

GaussianParams gd_step(const GaussianParams& q, const MomentEstimates& mo,
                       const StepConfig& cfg) {
  check_moments(q.dim(), mo);
  const Eigen::Index d = q.dim();
  // V^{-1} C = C^{-T}.
  const Matrix cinv_t = q.chol().transpose().triangularView<Eigen::Upper>().solve(
      Matrix::Identity(d, d));
  const Matrix grad_c = mo.hess * q.chol() - cfg.gamma * cinv_t;
  Matrix c_next = q.chol() - cfg.rho * lower_part(grad_c);
  check_diagonal(c_next, "gd");
  return GaussianParams(q.mean() - cfg.rho * mo.grad, std::move(c_next));
}

NaturalState vn_step(const NaturalState& s, const MomentEstimates& mo,
                     const StepConfig& cfg) {
  check_moments(s.dim(), mo);
  const Matrix s_next =
      symmetrize((1.0 - cfg.gamma * cfg.rho) * s.precision() + cfg.rho * mo.hess);
  Eigen::LLT<Matrix> llt(s_next);
  if (llt.info() != Eigen::Success) {
    throw PositivityError("vn: updated precision is not positive definite");
  }
  Vector m_next = s.mean() - cfg.rho * llt.solve(mo.grad);
  return NaturalState(std::move(m_next), s_next);
}

std::pair<Vector, Matrix> srvn_direction(const GaussianParams& q,
                                         const MomentEstimates& mo, double gamma) {
  check_moments(q.dim(), mo);
  const Eigen::Index d = q.dim();
  const auto c = q.chol().triangularView<Eigen::Lower>();
  const Matrix ct_h_c = q.chol().transpose() * (mo.hess * q.chol());
  const Matrix inner = gamma * Matrix::Identity(d, d) - symmetrize(ct_h_c);
  Matrix dc = c * tril_half_diag(inner);
  Vector dm = -(c * (q.chol().transpose() * mo.grad));
  return {std::move(dm), std::move(dc)};
}

GaussianParams srvn_step(const GaussianParams& q, const MomentEstimates& mo,
                         const StepConfig& cfg) {
  auto [dm, dc] = srvn_direction(q, mo, cfg.gamma);
  Matrix c_next = q.chol() + cfg.rho * dc;
  check_diagonal(c_next, "srvn");
  return GaussianParams(q.mean() + cfg.rho * dm, std::move(c_next));
}

MeanCovariance bwgd_step(const MeanCovariance& q, const MomentEstimates& mo,
                         double alpha) {
  check_moments(q.dim(), mo);
  const Eigen::Index d = q.dim();
  Eigen::LLT<Matrix> llt(q.cov);
  if (llt.info() != Eigen::Success) {
    throw PositivityError("bwgd: covariance is not positive definite");
  }
  const Matrix s = symmetrize(llt.solve(Matrix::Identity(d, d)));
  const Matrix m = Matrix::Identity(d, d) - alpha * (mo.hess - s);
  const Matrix v_next = symmetrize(m * q.cov * m.transpose());
  // M V M^T is PSD by construction; it degenerates when M is (nearly)
  // singular, so apply the same diagonal floor as for Cholesky factors.
  Eigen::LLT<Matrix> next(v_next);
  if (next.info() != Eigen::Success ||
      Matrix(next.matrixL()).diagonal().minCoeff() < kDiagonalFloor) {
    throw PositivityError("bwgd: updated covariance is not positive definite");
  }
  return MeanCovariance(q.mean - alpha * mo.grad, v_next);
}

// ---------------------------------------------------------------- run loop

namespace {

using Clock = std::chrono::steady_clock;

// Method-native state with uniform diagnostic access.
struct State {
  std::optional<GaussianParams> chol;  // gd, srvn
  std::optional<NaturalState> natural;  // vn
  std::optional<MeanCovariance> mv;     // bwgd

  MeanCovariance view() const {
    if (chol) return MeanCovariance(*chol);
    if (natural) return MeanCovariance(natural->mean(), natural->covariance());
    return *mv;
  }
};

}  // namespace

RunRecord run_optimizer(Method method, const GaussianParams& init,
                        const ProblemSpec& problem, const OracleConfig& oracle,
                        const StepConfig& step, const RunHooks& hooks) {
  step.validate();
  if (step.gamma != problem.gamma) {
    throw ConfigError("step gamma differs from problem gamma");
  }
  if (init.dim() != problem.dim()) throw DimensionError("init/problem dimension mismatch");

  RunRecord rec;
  rec.method = method;
  State state;
  switch (method) {
    case Method::gd:
    case Method::srvn: state.chol = init; break;
    case Method::vn: state.natural = to_natural(init); break;
    case Method::bwgd: state.mv = MeanCovariance(init); break;
  }

  double elapsed_ms = 0.0;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (long t = 0;; ++t) {
    const MeanCovariance view = state.view();
    const auto t0 = Clock::now();
    std::optional<MomentEstimates> mo;
    try {
      mo = state.chol ? compute_moments(*state.chol, problem, oracle)
                      : compute_moments(view, problem, oracle);
    } catch (const Error& e) {
      rec.status = RunStatus::aborted;
      rec.abort_message = e.what();
      rec.abort_iteration = t;
      break;
    }
    elapsed_ms += std::chrono::duration<double, std::milli>(Clock::now() - t0).count();

    Eigen::SelfAdjointEigenSolver<Matrix> eig(view.cov, Eigen::EigenvaluesOnly);
    const Matrix precision = [&] {
      if (state.natural) return state.natural->precision();
      if (state.chol) return state.chol->precision();
      Eigen::LLT<Matrix> llt(view.cov);
      return Matrix(symmetrize(llt.solve(Matrix::Identity(view.dim(), view.dim()))));
    }();
    IterationRow row{t, elapsed_ms, nan, mo->grad.norm(), std::sqrt(view.cov.trace()),
                     eig.eigenvalues().minCoeff(), eig.eigenvalues().maxCoeff(), nan, nan};
    if (hooks.record_elbo) {
      row.neg_elbo = state.chol ? elbo(*state.chol, problem, oracle)
                                : elbo(view, problem, oracle);
    }
    if (hooks.mean_metrics) {
      const TestMetrics tm = hooks.mean_metrics(view.mean);
      row.test_nll = tm.nll_sum;
      row.test_accuracy = tm.accuracy;
    }
    rec.rows.push_back(row);
    rec.final_mean = view.mean;
    rec.final_cov = view.cov;
    rec.final_grad_norm = row.grad_norm;
    rec.final_fixed_point_residual = (mo->hess - problem.gamma * precision).norm();

    if (rec.final_grad_norm <= step.grad_tol &&
        rec.final_fixed_point_residual <= step.fixed_point_tol) {
      rec.status = RunStatus::converged;
      break;
    }
    if (t >= step.max_iters) {
      rec.status = RunStatus::max_iters;
      break;
    }
    const auto t1 = Clock::now();
    try {
      switch (method) {
        case Method::gd: state.chol = gd_step(*state.chol, *mo, step); break;
        case Method::srvn: state.chol = srvn_step(*state.chol, *mo, step); break;
        case Method::vn: state.natural = vn_step(*state.natural, *mo, step); break;
        case Method::bwgd: state.mv = bwgd_step(*state.mv, *mo, step.rho); break;
      }
    } catch (const Error& e) {
      rec.status = RunStatus::aborted;
      rec.abort_message = e.what();
      rec.abort_iteration = t + 1;
      break;
    }
    elapsed_ms += std::chrono::duration<double, std::milli>(Clock::now() - t1).count();
  }
  return rec;
}

EmpiricalBounds empirical_bounds(const RunRecord& rec) {
  if (rec.rows.empty()) throw ConfigError("empty run record");
  EmpiricalBounds b{std::numeric_limits<double>::infinity(),
                    std::numeric_limits<double>::infinity(), 0.0};
  for (const auto& r : rec.rows) {
    b.lambda_min = std::min(b.lambda_min, r.v_eig_min);
    b.xi_l = std::min(b.xi_l, r.c_frob);
    b.xi_u = std::max(b.xi_u, r.c_frob);
  }
  return b;
}

TheoryConstants pilot_constants(const ProblemSpec& problem, const GaussianParams& init,
                                const OracleConfig& oracle, double pilot_rho,
                                long pilot_iters) {
  StepConfig step;
  step.rho = pilot_rho;
  step.gamma = problem.gamma;
  step.max_iters = pilot_iters;
  RunHooks hooks;
  hooks.record_elbo = false;
  const RunRecord rec = run_optimizer(Method::gd, init, problem, oracle, step, hooks);
  const EmpiricalBounds b = empirical_bounds(rec);
  const auto [delta, M] = curvature_bounds(problem);
  return TheoryConstants::make(delta, M, b.lambda_min, b.xi_l, b.xi_u);
}

CertifiedRun certify_srvn_constants(const ProblemSpec& problem, const GaussianParams& init,
                                    const OracleConfig& oracle, const StepConfig& base,
                                    int max_rounds) {
  const auto [delta, M] = curvature_bounds(problem);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(init.covariance(), Eigen::EigenvaluesOnly);
  double lambda_min = eig.eigenvalues().minCoeff();
  double xi_l = std::sqrt(init.covariance().trace());
  double xi_u = xi_l;
  for (int round = 1; round <= max_rounds; ++round) {
    const TheoryConstants c = TheoryConstants::make(delta, M, lambda_min, xi_l, xi_u);
    const StepSizeChoice s = rate_optimal_step(c);
    StepConfig step = base;
    step.rho = s.rho;
    RunRecord rec = run_optimizer(Method::srvn, init, problem, oracle, step);
    const EmpiricalBounds b = empirical_bounds(rec);
    constexpr double slack = 1e-12;
    if (b.lambda_min >= lambda_min * (1.0 - slack) && b.xi_l >= xi_l * (1.0 - slack) &&
        b.xi_u <= xi_u * (1.0 + slack)) {
      return CertifiedRun{c, s, std::move(rec), round};
    }
    lambda_min = std::min(lambda_min, b.lambda_min);
    xi_l = std::min(xi_l, b.xi_l);
    xi_u = std::max(xi_u, b.xi_u);
  }
  throw TheoryViolation("Assumption-4 constants did not stabilize after " +
                        std::to_string(max_rounds) + " rounds");
}

}  // namespace ngvi
