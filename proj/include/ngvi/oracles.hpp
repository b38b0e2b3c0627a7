#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <utility>
#include <variant>
#include <vector>

#include "ngvi/data.hpp"
#include "ngvi/gaussian.hpp"

namespace ngvi {

// l(theta) = 1/2 theta^T A theta - b^T theta + c.
struct QuadraticLoss {
  Matrix a;
  Vector b;
  double c = 0.0;
};

// l(theta) = sum_i softplus(-y_i theta^T x_i) + beta/2 |theta|^2.
struct LogisticLoss {
  std::shared_ptr<const data::DesignMatrix> data;
  double beta = 0.0;
};

struct ProblemSpec {
  std::variant<QuadraticLoss, LogisticLoss> loss;
  double gamma = 1.0;
  // Adds sum_i m_i^2 / (1 + m_i^2), evaluated at the variational mean.
  bool nonconvex_reg = false;

  Eigen::Index dim() const;
  bool is_quadratic() const {
    return std::holds_alternative<QuadraticLoss>(loss);
  }
  bool is_logistic() const {
    return std::holds_alternative<LogisticLoss>(loss);
  }
  const QuadraticLoss& quadratic() const { return std::get<QuadraticLoss>(loss); }
  const LogisticLoss& logistic() const { return std::get<LogisticLoss>(loss); }
};

// Validating constructors (A symmetrized and Cholesky-certified, beta >= 0,
// gamma > 0).
ProblemSpec make_quadratic_problem(Matrix a, Vector b, double c = 0.0,
                                   double gamma = 1.0);
ProblemSpec make_logistic_problem(std::shared_ptr<const data::DesignMatrix> dm,
                                  double beta, double gamma = 1.0);

enum class OracleMode { deterministic, monte_carlo };

struct OracleConfig {
  int quadrature_nodes = 64;
  OracleMode mode = OracleMode::deterministic;
  int mc_samples = 1;
  std::uint64_t mc_seed = 0;
  std::optional<Vector> bias_g;
  std::optional<Matrix> bias_h;
};

// Probabilists' weights are folded in: E[f(Z)], Z ~ N(0,1), is
// sum_k weights[k] * f(nodes[k]).
struct NormalQuadrature {
  std::vector<double> nodes;
  std::vector<double> weights;
};

// Gauss-Hermite rule rescaled for the standard normal (n >= 3).
const NormalQuadrature& normal_quadrature(int n);

MomentEstimates quadratic_moments(const MeanCovariance& q, const ProblemSpec& spec);
MomentEstimates quadratic_moments(const GaussianParams& q, const ProblemSpec& spec);

MomentEstimates logistic_moments(const MeanCovariance& q, const ProblemSpec& spec,
                                 const OracleConfig& cfg);
MomentEstimates logistic_moments(const GaussianParams& q, const ProblemSpec& spec,
                                 const OracleConfig& cfg);

// E_q[l(theta)] for the loss family, without the non-convex term.
double expected_loss(const MeanCovariance& q, const ProblemSpec& spec,
                     const OracleConfig& cfg);
double expected_loss(const GaussianParams& q, const ProblemSpec& spec,
                     const OracleConfig& cfg);

// Sample averages of the pointwise gradient and Hessian over theta ~ q.
MomentEstimates mc_moments(const MeanCovariance& q, const ProblemSpec& spec,
                           const OracleConfig& cfg);
MomentEstimates mc_moments(const GaussianParams& q, const ProblemSpec& spec,
                           const OracleConfig& cfg);

MomentEstimates inject_bias(const MomentEstimates& base, const OracleConfig& cfg);

struct NonconvexTerm {
  double value;
  Vector grad;
  Matrix hess;
};
NonconvexTerm nonconvex_reg_moments(const Vector& mean);

// Pointwise loss derivatives at theta (used by the Monte-Carlo oracle and
// as the V -> 0 reference).
double pointwise_loss(const Vector& theta, const ProblemSpec& spec);
Vector pointwise_grad(const Vector& theta, const ProblemSpec& spec);
Matrix pointwise_hess(const Vector& theta, const ProblemSpec& spec);

// Full oracle: family moments (quadrature or Monte-Carlo), plus the
// non-convex term when enabled, plus injected bias when configured.
MomentEstimates compute_moments(const MeanCovariance& q, const ProblemSpec& spec,
                                const OracleConfig& cfg);
MomentEstimates compute_moments(const GaussianParams& q, const ProblemSpec& spec,
                                const OracleConfig& cfg);

// L(q) = E_q[l] (+ non-convex term) + gamma * neg_entropy(q).
double elbo(const GaussianParams& q, const ProblemSpec& spec, const OracleConfig& cfg);
double elbo(const MeanCovariance& q, const ProblemSpec& spec, const OracleConfig& cfg);

// Exact minimizer for quadratic problems: m* = A^{-1} b, V* = gamma A^{-1}.
GaussianParams quadratic_optimum(const ProblemSpec& spec);
double quadratic_optimal_elbo(const ProblemSpec& spec);

double sigmoid(double z);
double softplus(double z);

}  // namespace ngvi
