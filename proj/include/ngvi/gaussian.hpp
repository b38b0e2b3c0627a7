#pragma once

#include <Eigen/Dense>

#include "ngvi/errors.hpp"

namespace ngvi {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Entries of a Cholesky diagonal below this are rejected, never clamped.
inline constexpr double kDiagonalFloor = 1e-12;

// (A + A^T) / 2.
Matrix symmetrize(const Matrix& a);

// Gaussian N(mean, C C^T) with C lower triangular, positive diagonal.
class GaussianParams {
 public:
  GaussianParams(Vector mean, Matrix chol);

  // tau_0 = (m0, c0 I).
  static GaussianParams isotropic(Vector mean, double c0);

  const Vector& mean() const { return mean_; }
  const Matrix& chol() const { return chol_; }
  Eigen::Index dim() const { return mean_.size(); }

  Matrix covariance() const;
  // V^{-1} = C^{-T} C^{-1}, via triangular solves.
  Matrix precision() const;
  double log_det_covariance() const;

 private:
  Vector mean_;
  Matrix chol_;
};

// Mean and covariance; the state carried by BW-GD and by mv-flow.
struct MeanCovariance {
  Vector mean;
  Matrix cov;  // symmetrized on construction

  MeanCovariance(Vector m, Matrix v);
  explicit MeanCovariance(const GaussianParams& q);
  Eigen::Index dim() const { return mean.size(); }
};

// Natural-parameter state (m, S) with S = V^{-1}.
class NaturalState {
 public:
  NaturalState(Vector mean, Matrix precision);

  const Vector& mean() const { return mean_; }
  const Matrix& precision() const { return precision_; }
  Eigen::Index dim() const { return mean_.size(); }
  Matrix covariance() const;

 private:
  Vector mean_;
  Matrix precision_;
};

enum class BiasTag { exact, quadrature, monte_carlo, injected };

// Expected gradient g and expected Hessian H under q.
struct MomentEstimates {
  Vector grad;
  Matrix hess;
  BiasTag bias_tag = BiasTag::exact;

  MomentEstimates(Vector g, Matrix h, BiasTag tag);
  Eigen::Index dim() const { return grad.size(); }
};

// Strictly-lower part kept, diagonal halved, upper part zeroed.
Matrix tril_half_diag(const Matrix& a);

// Plain lower-triangular part (diagonal kept).
Matrix lower_part(const Matrix& a);

// E_q[log q] = -(d/2)(1 + log 2 pi) - sum log C_ii.
double neg_entropy(const GaussianParams& q);
double neg_entropy(const MeanCovariance& q);

double gaussian_kl(const GaussianParams& q, const GaussianParams& p);

NaturalState to_natural(const GaussianParams& q);
GaussianParams from_natural(const NaturalState& s);

// Lower Cholesky factor of an SPD matrix; throws FactorizationError.
Matrix cholesky_lower(const Matrix& spd, const char* what = "matrix");

}  // namespace ngvi
