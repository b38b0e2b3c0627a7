#include "ngvi/theory.hpp"

#include <cmath>
#include <random>

namespace ngvi {

Vector vec(const Matrix& a) {
  return Eigen::Map<const Vector>(a.data(), a.size());
}

Vector vech(const Matrix& a) {
  const Eigen::Index d = a.rows();
  Vector out(d * (d + 1) / 2);
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < d; ++j) {
    for (Eigen::Index i = j; i < d; ++i) out(k++) = a(i, j);
  }
  return out;
}

Matrix unvech(const Vector& v, Eigen::Index d) {
  if (v.size() != d * (d + 1) / 2) throw DimensionError("unvech: wrong length");
  Matrix out = Matrix::Zero(d, d);
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < d; ++j) {
    for (Eigen::Index i = j; i < d; ++i) out(i, j) = v(k++);
  }
  return out;
}

VectorizationOps build_vectorization(Eigen::Index d) {
  if (d < 1 || d > kMaxVectorizationDim) {
    throw SizeError("vectorization operators support 1 <= d <= " +
                    std::to_string(kMaxVectorizationDim) + ", got " + std::to_string(d));
  }
  const Eigen::Index dd = d * d;
  VectorizationOps ops{d, Matrix::Zero(dd, dd), Matrix::Zero(d * (d + 1) / 2, dd),
                       Matrix()};
  for (Eigen::Index j = 0; j < d; ++j) {
    for (Eigen::Index i = 0; i < d; ++i) ops.K(i + j * d, j + i * d) = 1.0;
  }
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < d; ++j) {
    for (Eigen::Index i = j; i < d; ++i) ops.L(k++, i + j * d) = 1.0;
  }
  ops.N = 0.5 * (ops.K + Matrix::Identity(dd, dd));
  return ops;
}

namespace {

Matrix kron_identity(const Matrix& c) {
  const Eigen::Index d = c.rows();
  Matrix out = Matrix::Zero(d * d, d * d);
  for (Eigen::Index b = 0; b < d; ++b) out.block(b * d, b * d, d, d) = c;
  return out;
}

void certify_spd(const Matrix& a, const char* what) {
  if (Eigen::LLT<Matrix>(a).info() != Eigen::Success) {
    throw FactorizationError(std::string(what) + " is not positive definite");
  }
}

}  // namespace

FimBlocks assemble_fim_inverse(const GaussianParams& q, const VectorizationOps& ops,
                               double scale) {
  if (q.dim() != ops.d) throw DimensionError("FIM: state/operator dimension mismatch");
  const Matrix& L = ops.L;
  const Matrix left = L * kron_identity(q.chol()) * L.transpose();
  const Matrix right = L * kron_identity(q.chol().transpose()) * L.transpose();
  const Matrix lnl = L * ops.N * L.transpose();
  Eigen::LLT<Matrix> lnl_llt(lnl);
  if (lnl_llt.info() != Eigen::Success) throw FactorizationError("L N L^T not SPD");
  FimBlocks out{q.covariance(), symmetrize(scale * left * lnl_llt.solve(right))};
  certify_spd(out.f_m_inv, "F_m^{-1}");
  certify_spd(out.f_c_inv, "F_C^{-1}");
  return out;
}

FimBlocks mc_fim_inverse(const GaussianParams& q, const VectorizationOps& ops,
                         long samples, std::uint64_t seed) {
  const Eigen::Index d = q.dim();
  const Eigen::Index p = ops.half_size();
  const Matrix cinv_t = q.chol().transpose().triangularView<Eigen::Upper>().solve(
      Matrix::Identity(d, d));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix fm = Matrix::Zero(d, d);
  Matrix fc = Matrix::Zero(p, p);
  Vector z(d);
  const Matrix eye = Matrix::Identity(d, d);
  for (long s = 0; s < samples; ++s) {
    for (Eigen::Index j = 0; j < d; ++j) z(j) = normal(rng);
    // Scores of log q(m + C z) with respect to m and the lower entries of C.
    const Vector sm = cinv_t * z;
    const Vector sc = vech(cinv_t * (z * z.transpose() - eye));
    fm.noalias() += sm * sm.transpose();
    fc.noalias() += sc * sc.transpose();
  }
  fm /= static_cast<double>(samples);
  fc /= static_cast<double>(samples);
  return FimBlocks{symmetrize(fm.inverse()), symmetrize(fc.inverse())};
}

std::pair<Vector, Vector> elbo_gradient_vech(const GaussianParams& q,
                                             const MomentEstimates& mo, double gamma) {
  const Eigen::Index d = q.dim();
  const Matrix cinv_t = q.chol().transpose().triangularView<Eigen::Upper>().solve(
      Matrix::Identity(d, d));
  const Matrix grad_c = mo.hess * q.chol() - gamma * cinv_t;
  return {mo.grad, vech(grad_c)};
}

std::pair<Vector, Matrix> natural_gradient(const GaussianParams& q,
                                           const MomentEstimates& mo, double gamma,
                                           const FimBlocks& fim) {
  const auto [gm, gc] = elbo_gradient_vech(q, mo, gamma);
  return {fim.f_m_inv * gm, unvech(fim.f_c_inv * gc, q.dim())};
}

double natural_direction_mismatch(const GaussianParams& q, const MomentEstimates& mo,
                                  double gamma, const FimBlocks& fim) {
  const auto [nm, nc] = natural_gradient(q, mo, gamma, fim);
  const auto [dm, dc] = srvn_direction(q, mo, gamma);
  const double diff = std::max((nm + dm).cwiseAbs().maxCoeff(), (nc + dc).cwiseAbs().maxCoeff());
  const double scale = std::max({dm.cwiseAbs().maxCoeff(), dc.cwiseAbs().maxCoeff(), 1e-300});
  return diff / scale;
}

FimBoundReport check_fim_eigen_bounds(const GaussianParams& q, const TheoryConstants& consts,
                          const VectorizationOps& ops) {
  const FimBlocks fim = assemble_fim_inverse(q, ops);
  Eigen::SelfAdjointEigenSolver<Matrix> em(fim.f_m_inv, Eigen::EigenvaluesOnly);
  Eigen::SelfAdjointEigenSolver<Matrix> ec(fim.f_c_inv, Eigen::EigenvaluesOnly);
  const double v_min = em.eigenvalues().minCoeff();
  const double frob = q.chol().norm();
  constexpr double tol = 1e-10;
  FimBoundReport r;
  r.in_hypothesis = v_min >= consts.lambda_min - tol && frob >= consts.xi_l - tol &&
                    frob <= consts.xi_u + tol;
  r.eig_min = std::min(v_min, ec.eigenvalues().minCoeff());
  r.eig_max = std::max(em.eigenvalues().maxCoeff(), ec.eigenvalues().maxCoeff());
  r.lower_bound = consts.lambda_g_min;
  r.upper_bound = consts.lambda_g_max;
  r.tight_lower = fim_tight_lower_bound(consts.lambda_min);
  r.holds = r.eig_min >= r.lower_bound - tol && r.eig_max <= r.upper_bound + tol;
  r.holds_tight = r.eig_min >= r.tight_lower - tol && r.eig_max <= r.upper_bound + tol;
  return r;
}

PlReport check_pl(const GaussianParams& q, const ProblemSpec& problem,
                  const TheoryConstants& consts, const VectorizationOps& ops,
                  double l_star, const OracleConfig& oracle) {
  const MomentEstimates mo = compute_moments(q, problem, oracle);
  const FimBlocks fim = assemble_fim_inverse(q, ops);
  const auto [gm, gc] = elbo_gradient_vech(q, mo, problem.gamma);
  PlReport r;
  r.lhs = gm.dot(fim.f_m_inv * gm) + gc.dot(fim.f_c_inv * gc);
  r.gap = elbo(q, problem, oracle) - l_star;
  r.rhs = 2.0 * consts.mu * r.gap;
  r.rhs_tight = 2.0 * consts.delta * fim_tight_lower_bound(consts.lambda_min) * r.gap;
  constexpr double slack = 1e-8;
  r.holds = r.lhs >= r.rhs - slack;
  r.holds_tight = r.lhs >= r.rhs_tight - slack;
  return r;
}

NeumannReport neumann_gap(const GaussianParams& q, const MomentEstimates& mo,
                          const std::vector<double>& rhos, double gamma,
                          const TrilFn& tril) {
  const Eigen::Index d = q.dim();
  const Matrix eye = Matrix::Identity(d, d);
  const Matrix s = q.precision();
  const Matrix& c = q.chol();
  const Matrix inner = symmetrize(c.transpose() * mo.hess * c) - gamma * eye;
  NeumannReport r;
  r.rhos = rhos;
  for (double rho : rhos) {
    const Matrix s_next = symmetrize((1.0 - gamma * rho) * s + rho * mo.hess);
    const Matrix v_vn = symmetrize(Eigen::LLT<Matrix>(s_next).solve(eye));
    const Matrix c_next = c - rho * c * tril(inner);
    const Matrix v_sr = symmetrize(c_next * c_next.transpose());
    r.gaps.push_back((v_vn - v_sr).norm());
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(rhos.size());
  for (std::size_t i = 0; i < rhos.size(); ++i) {
    const double x = std::log(rhos[i]);
    const double y = std::log(r.gaps[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  r.order = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  r.ok = r.order >= 1.8 && r.order <= 2.2;
  return r;
}

double flop_estimate(Method method, long d) {
  if (d < 1) throw ConfigError("flop_estimate needs d >= 1");
  const double x = static_cast<double>(d);
  switch (method) {
    case Method::vn: return x * x * x + 4.0 * x * x;
    case Method::srvn: return 3.0 * x * x * x + 4.5 * x * x + 0.5 * x;
    case Method::bwgd: return 3.0 * x * x * x + 5.0 * x * x;
    case Method::gd: break;
  }
  throw ConfigError("no operation count is defined for gd");
}

}  // namespace ngvi
