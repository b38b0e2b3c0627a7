#include "ngvi/oracles.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <random>
#include <string>

namespace ngvi {

Eigen::Index ProblemSpec::dim() const {
  if (is_quadratic()) return quadratic().a.rows();
  return logistic().data->cols();
}

ProblemSpec make_quadratic_problem(Matrix a, Vector b, double c, double gamma) {
  if (a.rows() != a.cols() || a.rows() != b.size() || b.size() == 0) {
    throw DimensionError("quadratic loss: A must be d x d and b length d");
  }
  if (!(gamma > 0.0)) throw ConfigError("temperature gamma must be positive");
  Matrix sym = symmetrize(a);
  cholesky_lower(sym, "quadratic matrix A");
  ProblemSpec spec;
  spec.loss = QuadraticLoss{std::move(sym), std::move(b), c};
  spec.gamma = gamma;
  return spec;
}

ProblemSpec make_logistic_problem(std::shared_ptr<const data::DesignMatrix> dm,
                                  double beta, double gamma) {
  if (!dm) throw ConfigError("logistic loss needs a design matrix");
  if (!(beta >= 0.0)) throw ConfigError("l2 strength beta must be >= 0");
  if (!(gamma > 0.0)) throw ConfigError("temperature gamma must be positive");
  ProblemSpec spec;
  spec.loss = LogisticLoss{std::move(dm), beta};
  spec.gamma = gamma;
  return spec;
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) {
  if (z > 0.0) return z + std::log1p(std::exp(-z));
  return std::log1p(std::exp(z));
}

const NormalQuadrature& normal_quadrature(int n) {
  if (n < 3) {
    throw ConfigError("quadrature_nodes must be >= 3, got " + std::to_string(n));
  }
  static std::mutex mutex;
  static std::map<int, NormalQuadrature> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;

  // Golub-Welsch on the Jacobi matrix of the probabilists' Hermite
  // polynomials: zero diagonal, off-diagonal sqrt(k).
  Matrix jacobi = Matrix::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(static_cast<double>(k));
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(jacobi);
  NormalQuadrature rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  double total = 0.0;
  for (int k = 0; k < n; ++k) {
    rule.nodes[k] = eig.eigenvalues()(k);
    const double v0 = eig.eigenvectors()(0, k);
    rule.weights[k] = v0 * v0;
    total += rule.weights[k];
  }
  for (double& w : rule.weights) w /= total;
  // Exact symmetry of the rule.
  for (int k = 0; k < n / 2; ++k) {
    const double x = 0.5 * (rule.nodes[n - 1 - k] - rule.nodes[k]);
    const double w = 0.5 * (rule.weights[k] + rule.weights[n - 1 - k]);
    rule.nodes[k] = -x;
    rule.nodes[n - 1 - k] = x;
    rule.weights[k] = rule.weights[n - 1 - k] = w;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  return cache.emplace(n, std::move(rule)).first->second;
}

namespace {

void require_dim(const MeanCovariance& q, const ProblemSpec& spec) {
  if (q.dim() != spec.dim()) {
    throw DimensionError("state dimension " + std::to_string(q.dim()) +
                         " does not match problem dimension " +
                         std::to_string(spec.dim()));
  }
}

const LogisticLoss& require_logistic(const ProblemSpec& spec) {
  if (!spec.is_logistic()) throw ConfigError("problem is not logistic");
  return spec.logistic();
}

const QuadraticLoss& require_quadratic(const ProblemSpec& spec) {
  if (!spec.is_quadratic()) throw ConfigError("problem is not quadratic");
  return spec.quadratic();
}

// Per-datapoint Gaussian marginal of the activation a_i = theta^T x_i.
struct Marginals {
  Vector mu;
  Vector sd;
};

Marginals activation_marginals(const data::DesignMatrix& dm,
                               const MeanCovariance& q) {
  const auto& x = dm.x();
  const Matrix xv = x * q.cov;
  Marginals out{Vector(dm.rows()), Vector(dm.rows())};
  for (Eigen::Index i = 0; i < x.outerSize(); ++i) {
    double mu = 0.0;
    double s2 = 0.0;
    for (data::SparseRows::InnerIterator it(x, i); it; ++it) {
      mu += it.value() * q.mean(it.col());
      s2 += it.value() * xv(i, it.col());
    }
    out.mu(i) = mu;
    out.sd(i) = std::sqrt(s2 > 0.0 ? s2 : 0.0);
  }
  return out;
}

// H += sum_i w_i x_i x_i^T, rows visited in ascending order.
void accumulate_outer(const data::SparseRows& x, const Vector& w, Matrix& h) {
  for (Eigen::Index i = 0; i < x.outerSize(); ++i) {
    if (w(i) == 0.0) continue;
    for (data::SparseRows::InnerIterator a(x, i); a; ++a) {
      const double wa = w(i) * a.value();
      for (data::SparseRows::InnerIterator b(x, i); b; ++b) {
        h(a.col(), b.col()) += wa * b.value();
      }
    }
  }
}

Vector transpose_times(const data::SparseRows& x, const Vector& r) {
  Vector out = Vector::Zero(x.cols());
  for (Eigen::Index i = 0; i < x.outerSize(); ++i) {
    if (r(i) == 0.0) continue;
    for (data::SparseRows::InnerIterator it(x, i); it; ++it) {
      out(it.col()) += r(i) * it.value();
    }
  }
  return out;
}

}  // namespace

MomentEstimates quadratic_moments(const MeanCovariance& q, const ProblemSpec& spec) {
  const auto& quad = require_quadratic(spec);
  require_dim(q, spec);
  return MomentEstimates(quad.a * q.mean - quad.b, quad.a, BiasTag::exact);
}

MomentEstimates quadratic_moments(const GaussianParams& q, const ProblemSpec& spec) {
  const auto& quad = require_quadratic(spec);
  if (q.dim() != spec.dim()) throw DimensionError("state/problem dimension mismatch");
  return MomentEstimates(quad.a * q.mean() - quad.b, quad.a, BiasTag::exact);
}

MomentEstimates logistic_moments(const MeanCovariance& q, const ProblemSpec& spec,
                                 const OracleConfig& cfg) {
  const auto& lg = require_logistic(spec);
  require_dim(q, spec);
  const auto& rule = normal_quadrature(cfg.quadrature_nodes);
  const auto& dm = *lg.data;
  const Marginals marg = activation_marginals(dm, q);
  const Eigen::Index n = dm.rows();
  const Eigen::Index d = dm.cols();

  Vector resid(n);  // E[d/da softplus(-y a)]
  Vector curv(n);   // E[sigma(a)(1 - sigma(a))]
  for (Eigen::Index i = 0; i < n; ++i) {
    const double y = dm.labels()(i);
    double r = 0.0;
    double c = 0.0;
    for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
      const double a = marg.mu(i) + marg.sd(i) * rule.nodes[k];
      const double s = sigmoid(a);
      r += rule.weights[k] * (-y * sigmoid(-y * a));
      c += rule.weights[k] * s * (1.0 - s);
    }
    resid(i) = r;
    curv(i) = c;
  }
  Vector grad = transpose_times(dm.x(), resid) + lg.beta * q.mean;
  Matrix hess = Matrix::Zero(d, d);
  accumulate_outer(dm.x(), curv, hess);
  hess.diagonal().array() += lg.beta;
  return MomentEstimates(std::move(grad), std::move(hess), BiasTag::quadrature);
}

MomentEstimates logistic_moments(const GaussianParams& q, const ProblemSpec& spec,
                                 const OracleConfig& cfg) {
  return logistic_moments(MeanCovariance(q), spec, cfg);
}

double expected_loss(const MeanCovariance& q, const ProblemSpec& spec,
                     const OracleConfig& cfg) {
  require_dim(q, spec);
  if (spec.is_quadratic()) {
    const auto& quad = spec.quadratic();
    return 0.5 * (q.mean.dot(quad.a * q.mean) + (quad.a.cwiseProduct(q.cov)).sum()) -
           quad.b.dot(q.mean) + quad.c;
  }
  const auto& lg = spec.logistic();
  const auto& rule = normal_quadrature(cfg.quadrature_nodes);
  const auto& dm = *lg.data;
  const Marginals marg = activation_marginals(dm, q);
  double total = 0.0;
  for (Eigen::Index i = 0; i < dm.rows(); ++i) {
    const double y = dm.labels()(i);
    double e = 0.0;
    for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
      e += rule.weights[k] * softplus(-y * (marg.mu(i) + marg.sd(i) * rule.nodes[k]));
    }
    total += e;
  }
  return total + 0.5 * lg.beta * (q.mean.squaredNorm() + q.cov.trace());
}

double expected_loss(const GaussianParams& q, const ProblemSpec& spec,
                     const OracleConfig& cfg) {
  return expected_loss(MeanCovariance(q), spec, cfg);
}

double pointwise_loss(const Vector& theta, const ProblemSpec& spec) {
  if (spec.is_quadratic()) {
    const auto& quad = spec.quadratic();
    return 0.5 * theta.dot(quad.a * theta) - quad.b.dot(theta) + quad.c;
  }
  const auto& lg = spec.logistic();
  const Vector act = lg.data->x() * theta;
  double total = 0.0;
  for (Eigen::Index i = 0; i < act.size(); ++i) {
    total += softplus(-lg.data->labels()(i) * act(i));
  }
  return total + 0.5 * lg.beta * theta.squaredNorm();
}

Vector pointwise_grad(const Vector& theta, const ProblemSpec& spec) {
  if (spec.is_quadratic()) {
    const auto& quad = spec.quadratic();
    return quad.a * theta - quad.b;
  }
  const auto& lg = spec.logistic();
  const Vector act = lg.data->x() * theta;
  Vector r(act.size());
  for (Eigen::Index i = 0; i < act.size(); ++i) {
    const double y = lg.data->labels()(i);
    r(i) = -y * sigmoid(-y * act(i));
  }
  return transpose_times(lg.data->x(), r) + lg.beta * theta;
}

Matrix pointwise_hess(const Vector& theta, const ProblemSpec& spec) {
  if (spec.is_quadratic()) return spec.quadratic().a;
  const auto& lg = spec.logistic();
  const Vector act = lg.data->x() * theta;
  Vector w(act.size());
  for (Eigen::Index i = 0; i < act.size(); ++i) {
    const double s = sigmoid(act(i));
    w(i) = s * (1.0 - s);
  }
  const Eigen::Index d = lg.data->cols();
  Matrix h = Matrix::Zero(d, d);
  accumulate_outer(lg.data->x(), w, h);
  h.diagonal().array() += lg.beta;
  return h;
}

namespace {

MomentEstimates mc_moments_with_factor(const Vector& mean, const Matrix& factor,
                                       const ProblemSpec& spec,
                                       const OracleConfig& cfg) {
  if (cfg.mc_samples < 1) throw ConfigError("mc_samples must be >= 1");
  const Eigen::Index d = mean.size();
  std::mt19937_64 rng(cfg.mc_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector g = Vector::Zero(d);
  Matrix h = Matrix::Zero(d, d);
  Vector z(d);
  const bool quadratic = spec.is_quadratic();
  for (int s = 0; s < cfg.mc_samples; ++s) {
    for (Eigen::Index j = 0; j < d; ++j) z(j) = normal(rng);
    const Vector theta = mean + factor.triangularView<Eigen::Lower>() * z;
    g += pointwise_grad(theta, spec);
    if (!quadratic) h += pointwise_hess(theta, spec);
  }
  const double inv = 1.0 / static_cast<double>(cfg.mc_samples);
  g *= inv;
  if (quadratic) {
    h = spec.quadratic().a;  // pointwise Hessian is constant
  } else {
    h *= inv;
  }
  return MomentEstimates(std::move(g), std::move(h), BiasTag::monte_carlo);
}

}  // namespace

MomentEstimates mc_moments(const MeanCovariance& q, const ProblemSpec& spec,
                           const OracleConfig& cfg) {
  require_dim(q, spec);
  return mc_moments_with_factor(q.mean, cholesky_lower(q.cov, "covariance"), spec, cfg);
}

MomentEstimates mc_moments(const GaussianParams& q, const ProblemSpec& spec,
                           const OracleConfig& cfg) {
  if (q.dim() != spec.dim()) throw DimensionError("state/problem dimension mismatch");
  return mc_moments_with_factor(q.mean(), q.chol(), spec, cfg);
}

MomentEstimates inject_bias(const MomentEstimates& base, const OracleConfig& cfg) {
  Vector g = base.grad;
  Matrix h = base.hess;
  if (cfg.bias_g) {
    if (cfg.bias_g->size() != g.size()) throw DimensionError("bias_g dimension mismatch");
    g += *cfg.bias_g;
  }
  if (cfg.bias_h) {
    if (cfg.bias_h->rows() != h.rows() || cfg.bias_h->cols() != h.cols()) {
      throw DimensionError("bias_H dimension mismatch");
    }
    h += *cfg.bias_h;
  }
  return MomentEstimates(std::move(g), std::move(h), BiasTag::injected);
}

NonconvexTerm nonconvex_reg_moments(const Vector& mean) {
  const Eigen::Index d = mean.size();
  NonconvexTerm out{0.0, Vector(d), Matrix::Zero(d, d)};
  for (Eigen::Index i = 0; i < d; ++i) {
    const double m = mean(i);
    const double u = 1.0 + m * m;
    out.value += m * m / u;
    out.grad(i) = 2.0 * m / (u * u);
    out.hess(i, i) = (2.0 - 6.0 * m * m) / (u * u * u);
  }
  return out;
}

MomentEstimates compute_moments(const MeanCovariance& q, const ProblemSpec& spec,
                                const OracleConfig& cfg) {
  MomentEstimates base = [&] {
    if (cfg.mode == OracleMode::monte_carlo) return mc_moments(q, spec, cfg);
    if (spec.is_quadratic()) return quadratic_moments(q, spec);
    return logistic_moments(q, spec, cfg);
  }();
  if (spec.nonconvex_reg) {
    const NonconvexTerm t = nonconvex_reg_moments(q.mean);
    base = MomentEstimates(base.grad + t.grad, base.hess + t.hess, base.bias_tag);
  }
  if (cfg.bias_g || cfg.bias_h) return inject_bias(base, cfg);
  return base;
}

MomentEstimates compute_moments(const GaussianParams& q, const ProblemSpec& spec,
                                const OracleConfig& cfg) {
  if (cfg.mode == OracleMode::deterministic && spec.is_quadratic() &&
      !spec.nonconvex_reg && !cfg.bias_g && !cfg.bias_h) {
    return quadratic_moments(q, spec);
  }
  if (cfg.mode == OracleMode::monte_carlo) {
    MomentEstimates base = mc_moments(q, spec, cfg);
    if (spec.nonconvex_reg) {
      const NonconvexTerm t = nonconvex_reg_moments(q.mean());
      base = MomentEstimates(base.grad + t.grad, base.hess + t.hess, base.bias_tag);
    }
    if (cfg.bias_g || cfg.bias_h) return inject_bias(base, cfg);
    return base;
  }
  return compute_moments(MeanCovariance(q), spec, cfg);
}

double elbo(const GaussianParams& q, const ProblemSpec& spec, const OracleConfig& cfg) {
  double value = expected_loss(q, spec, cfg) + spec.gamma * neg_entropy(q);
  if (spec.nonconvex_reg) value += nonconvex_reg_moments(q.mean()).value;
  return value;
}

double elbo(const MeanCovariance& q, const ProblemSpec& spec, const OracleConfig& cfg) {
  double value = expected_loss(q, spec, cfg) + spec.gamma * neg_entropy(q);
  if (spec.nonconvex_reg) value += nonconvex_reg_moments(q.mean).value;
  return value;
}

GaussianParams quadratic_optimum(const ProblemSpec& spec) {
  const auto& quad = require_quadratic(spec);
  Eigen::LLT<Matrix> llt(quad.a);
  const Eigen::Index d = quad.a.rows();
  const Vector m = llt.solve(quad.b);
  const Matrix v = spec.gamma * symmetrize(llt.solve(Matrix::Identity(d, d)));
  return GaussianParams(m, cholesky_lower(v, "optimal covariance"));
}

double quadratic_optimal_elbo(const ProblemSpec& spec) {
  return elbo(quadratic_optimum(spec), spec, OracleConfig{});
}

}  // namespace ngvi
