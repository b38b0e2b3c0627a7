#include "ngvi/gaussian.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace ngvi {

Matrix symmetrize(const Matrix& a) { return 0.5 * (a + a.transpose()); }

namespace {

void require_square(const Matrix& a, const char* what) {
  if (a.rows() != a.cols()) {
    throw DimensionError(std::string(what) + " must be square, got " +
                         std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()));
  }
}

void require_dims(Eigen::Index n, const Matrix& a, const char* what) {
  require_square(a, what);
  if (n < 1) throw DimensionError("dimension must be at least 1");
  if (a.rows() != n) {
    throw DimensionError(std::string(what) + " has dimension " +
                         std::to_string(a.rows()) + ", mean has " +
                         std::to_string(n));
  }
}

}  // namespace

Matrix cholesky_lower(const Matrix& spd, const char* what) {
  Eigen::LLT<Matrix> llt(spd);
  if (llt.info() != Eigen::Success) {
    throw FactorizationError(std::string(what) +
                             " is not positive definite (Cholesky failed)");
  }
  return llt.matrixL();
}

GaussianParams::GaussianParams(Vector mean, Matrix chol)
    : mean_(std::move(mean)), chol_(std::move(chol)) {
  require_dims(mean_.size(), chol_, "Cholesky factor");
  const Eigen::Index d = dim();
  for (Eigen::Index j = 1; j < d; ++j) {
    for (Eigen::Index i = 0; i < j; ++i) {
      if (chol_(i, j) != 0.0) {
        throw StateError("Cholesky factor is not lower triangular at (" +
                         std::to_string(i) + "," + std::to_string(j) + ")");
      }
    }
  }
  for (Eigen::Index i = 0; i < d; ++i) {
    const double c = chol_(i, i);
    if (!(c >= kDiagonalFloor) || !std::isfinite(c)) {
      throw StateError("Cholesky diagonal entry " + std::to_string(i) +
                       " = " + std::to_string(c) + " is below the floor");
    }
  }
  if (!mean_.allFinite() || !chol_.allFinite()) {
    throw StateError("non-finite Gaussian parameters");
  }
}

GaussianParams GaussianParams::isotropic(Vector mean, double c0) {
  const Eigen::Index d = mean.size();
  return GaussianParams(std::move(mean), c0 * Matrix::Identity(d, d));
}

Matrix GaussianParams::covariance() const {
  Matrix v = chol_.triangularView<Eigen::Lower>() * chol_.transpose();
  return symmetrize(v);
}

Matrix GaussianParams::precision() const {
  const Eigen::Index d = dim();
  Matrix cinv = chol_.triangularView<Eigen::Lower>().solve(Matrix::Identity(d, d));
  return symmetrize(cinv.transpose() * cinv);
}

double GaussianParams::log_det_covariance() const {
  return 2.0 * chol_.diagonal().array().log().sum();
}

MeanCovariance::MeanCovariance(Vector m, Matrix v) : mean(std::move(m)) {
  require_dims(mean.size(), v, "covariance");
  cov = symmetrize(v);
}

MeanCovariance::MeanCovariance(const GaussianParams& q)
    : mean(q.mean()), cov(q.covariance()) {}

NaturalState::NaturalState(Vector mean, Matrix precision)
    : mean_(std::move(mean)) {
  require_dims(mean_.size(), precision, "precision");
  precision_ = symmetrize(precision);
  Eigen::LLT<Matrix> llt(precision_);
  if (llt.info() != Eigen::Success) {
    throw FactorizationError("precision is not positive definite");
  }
}

Matrix NaturalState::covariance() const {
  Eigen::LLT<Matrix> llt(precision_);
  return symmetrize(llt.solve(Matrix::Identity(dim(), dim())));
}

MomentEstimates::MomentEstimates(Vector g, Matrix h, BiasTag tag)
    : grad(std::move(g)), bias_tag(tag) {
  require_dims(grad.size(), h, "Hessian");
  hess = symmetrize(h);
}

Matrix tril_half_diag(const Matrix& a) {
  require_square(a, "tril argument");
  Matrix out = a.triangularView<Eigen::StrictlyLower>();
  out.diagonal() = 0.5 * a.diagonal();
  return out;
}

Matrix lower_part(const Matrix& a) {
  require_square(a, "lower-part argument");
  return a.triangularView<Eigen::Lower>();
}

double neg_entropy(const GaussianParams& q) {
  const double d = static_cast<double>(q.dim());
  return -0.5 * d * (1.0 + std::log(2.0 * std::numbers::pi)) -
         q.chol().diagonal().array().log().sum();
}

double neg_entropy(const MeanCovariance& q) {
  const Matrix c = cholesky_lower(q.cov, "covariance");
  const double d = static_cast<double>(q.dim());
  return -0.5 * d * (1.0 + std::log(2.0 * std::numbers::pi)) -
         c.diagonal().array().log().sum();
}

double gaussian_kl(const GaussianParams& q, const GaussianParams& p) {
  if (q.dim() != p.dim()) {
    throw DimensionError("KL between Gaussians of different dimension");
  }
  const auto lp = p.chol().triangularView<Eigen::Lower>();
  const Matrix a = lp.solve(q.chol());                   // Cp^{-1} Cq
  const Vector r = lp.solve(Vector(p.mean() - q.mean()));  // Cp^{-1}(mp - mq)
  const double d = static_cast<double>(q.dim());
  const double kl = 0.5 * (a.squaredNorm() + r.squaredNorm() - d +
                           p.log_det_covariance() - q.log_det_covariance());
  return kl > 0.0 ? kl : 0.0;
}

NaturalState to_natural(const GaussianParams& q) {
  return NaturalState(q.mean(), q.precision());
}

GaussianParams from_natural(const NaturalState& s) {
  return GaussianParams(s.mean(), cholesky_lower(s.covariance(), "covariance"));
}

}  // namespace ngvi
