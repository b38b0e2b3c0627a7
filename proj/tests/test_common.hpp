#pragma once

#include <cmath>
#include <random>

#include "ngvi/gaussian.hpp"

namespace testutil {

using ngvi::Matrix;
using ngvi::Vector;

inline double normal(std::mt19937_64& rng) {
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = normal(rng);
  return m;
}

inline Vector random_vector(Eigen::Index d, std::mt19937_64& rng) {
  Vector v(d);
  for (Eigen::Index i = 0; i < d; ++i) v(i) = normal(rng);
  return v;
}

// SPD matrix with eigenvalues in [lo, hi].
inline Matrix random_spd(Eigen::Index d, std::mt19937_64& rng, double lo = 0.5,
                         double hi = 3.0) {
  const Matrix q = Eigen::HouseholderQR<Matrix>(random_matrix(d, d, rng)).householderQ();
  Vector eig(d);
  std::uniform_real_distribution<double> u(lo, hi);
  for (Eigen::Index i = 0; i < d; ++i) eig(i) = u(rng);
  Matrix a = q * eig.asDiagonal() * q.transpose();
  return 0.5 * (a + a.transpose());
}

// Lower-triangular factor with diagonal in [0.5, 1.5].
inline Matrix random_chol(Eigen::Index d, std::mt19937_64& rng, double off = 0.3) {
  Matrix c = Matrix::Zero(d, d);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  for (Eigen::Index j = 0; j < d; ++j) {
    c(j, j) = u(rng);
    for (Eigen::Index i = j + 1; i < d; ++i) c(i, j) = off * normal(rng);
  }
  return c;
}

inline ngvi::GaussianParams random_params(Eigen::Index d, std::mt19937_64& rng) {
  return ngvi::GaussianParams(random_vector(d, rng), random_chol(d, rng));
}

inline double rel_err(const Matrix& a, const Matrix& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

}  // namespace testutil
