#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "ngvi/gaussian.hpp"
#include "ngvi/optimizers.hpp"
#include "ngvi/oracles.hpp"

namespace ngvi {

inline constexpr Eigen::Index kMaxVectorizationDim = 64;

// Dense commutation (K), elimination (L) and symmetrizer (N = (K + I)/2)
// matrices for d x d arguments; vec is column-major, vech drops the
// supra-diagonal entries.
struct VectorizationOps {
  Eigen::Index d;
  Matrix K;
  Matrix L;
  Matrix N;

  Eigen::Index half_size() const { return d * (d + 1) / 2; }
};

VectorizationOps build_vectorization(Eigen::Index d);

Vector vec(const Matrix& a);
Vector vech(const Matrix& a);
// Inverse of vech onto lower-triangular matrices.
Matrix unvech(const Vector& v, Eigen::Index d);

struct FimBlocks {
  Matrix f_m_inv;  // = V
  Matrix f_c_inv;  // acts on vech of the factor
};

// F_C^{-1} = s L (I (x) C) L^T (L N L^T)^{-1} L (I (x) C^T) L^T with s = 1/2.
// `scale` exists only so tests can tamper with the prefactor.
FimBlocks assemble_fim_inverse(const GaussianParams& q, const VectorizationOps& ops,
                               double scale = 0.5);

// Brute-force inverse FIM from Monte-Carlo score outer products.
FimBlocks mc_fim_inverse(const GaussianParams& q, const VectorizationOps& ops,
                         long samples, std::uint64_t seed);

// Euclidean gradient blocks: (g, vech of (H - gamma V^{-1}) C).
std::pair<Vector, Vector> elbo_gradient_vech(const GaussianParams& q,
                                             const MomentEstimates& mo, double gamma);

// F^{-1} grad, mapped back to (vector, lower-triangular matrix).
std::pair<Vector, Matrix> natural_gradient(const GaussianParams& q,
                                           const MomentEstimates& mo, double gamma,
                                           const FimBlocks& fim);

// max-abs difference between the FIM natural gradient and the negated
// square-root update direction, relative to the direction's max-abs.
double natural_direction_mismatch(const GaussianParams& q, const MomentEstimates& mo,
                                  double gamma, const FimBlocks& fim);

struct FimBoundReport {
  bool in_hypothesis;
  double eig_min;  // over both blocks
  double eig_max;
  double lower_bound;  // constants' lambda_g_min
  double upper_bound;  // constants' lambda_g_max
  double tight_lower;  // lambda_min / 2
  bool holds;          // printed bounds with 1e-10 slack
  bool holds_tight;    // tight lower bound with 1e-10 slack
};

FimBoundReport check_fim_eigen_bounds(const GaussianParams& q, const TheoryConstants& consts,
                          const VectorizationOps& ops);

struct PlReport {
  double lhs;  // |grad L|^2 in the F^{-1} metric
  double gap;  // L - L*
  double rhs;  // 2 mu gap with mu = delta lambda_g_min
  double rhs_tight;  // 2 delta (lambda_min / 2) gap
  bool holds;
  bool holds_tight;
};

PlReport check_pl(const GaussianParams& q, const ProblemSpec& problem,
                  const TheoryConstants& consts, const VectorizationOps& ops,
                  double l_star, const OracleConfig& oracle = {});

struct NeumannReport {
  std::vector<double> rhos;
  std::vector<double> gaps;
  double order;  // least-squares slope of log gap vs log rho
  bool ok;       // order within [1.8, 2.2]
};

using TrilFn = std::function<Matrix(const Matrix&)>;

// One-step covariance gap between the natural-parameter update (inverted)
// and the square-root update (squared) from the same state.
NeumannReport neumann_gap(const GaussianParams& q, const MomentEstimates& mo,
                          const std::vector<double>& rhos, double gamma = 1.0,
                          const TrilFn& tril = tril_half_diag);

// Per-update operation counts after g and H are available.
double flop_estimate(Method method, long d);

}  // namespace ngvi
