#include "pbll/bound.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace pbll {

namespace {

constexpr double kInvSqrt2Pi = 0.3989422804014326779;  // 1/sqrt(2 pi)
constexpr double kOrthonormalTol = 1e-8;

void check_pairing(std::span<const TaskDataset> tasks, std::span<const RidgeOperator> ops,
                   const VectorXd& w_Q) {
  if (tasks.empty()) throw std::invalid_argument("no tasks");
  if (tasks.size() != ops.size()) throw std::invalid_argument("one ridge operator per task required");
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (tasks[i].dim() != w_Q.size() || ops[i].dim() != w_Q.size())
      throw std::invalid_argument("dimension mismatch between tasks, operators and w_Q");
  }
}

// Sum in index order; every per-task quantity is computed first so the
// result does not depend on how the per-task work was scheduled.
double ordered_sum(const std::vector<double>& parts) {
  double s = 0.0;
  for (double p : parts) s += p;
  return s;
}

struct Coefficients {
  int n;
  double m_bar;
  double env;
  double task;
  double env_confidence;
  double task_confidence;
};

Coefficients coefficients(std::span<const TaskDataset> tasks, double delta) {
  Coefficients c{};
  c.n = static_cast<int>(tasks.size());
  c.m_bar = harmonic_mean(sample_sizes(tasks));
  const double n = c.n;
  const double sqrt_n = std::sqrt(n);
  const double sqrt_m = std::sqrt(c.m_bar);
  const double log_half_delta = std::log(delta / 2.0);
  c.env = 1.0 / sqrt_n + 1.0 / (n * sqrt_m);
  c.task = 1.0 / (n * sqrt_m);
  c.env_confidence = (1.0 / sqrt_n) * (0.125 - log_half_delta);
  c.task_confidence = (1.0 / sqrt_m) * (0.125 - log_half_delta / n);
  return c;
}

BoundReport assemble_gaussian(std::span<const TaskDataset> tasks, std::span<const RidgeOperator> ops,
                              const VectorXd& w_Q, const BoundConfig& cfg, double empirical) {
  cfg.validate();
  const Coefficients c = coefficients(tasks, cfg.delta);
  const double d = static_cast<double>(w_Q.size());

  std::vector<double> mean_parts(ops.size());
  std::vector<double> trace_parts(ops.size());
  for (std::size_t i = 0; i < ops.size(); ++i) {
    const MatrixXd shifted = ops[i].A - MatrixXd::Identity(w_Q.size(), w_Q.size());
    mean_parts[i] = (shifted * w_Q + ops[i].b).squaredNorm();
    trace_parts[i] = (shifted * shifted).trace();
  }

  BoundReport r;
  r.n = c.n;
  r.m_bar = c.m_bar;
  r.env_coefficient = c.env;
  r.task_coefficient = c.task;
  r.empirical_risk = empirical;
  r.env_kl_term = c.env * w_Q.squaredNorm() / (2.0 * cfg.sigma);
  r.task_kl_term = c.task * 0.5 * ordered_sum(mean_parts);
  r.env_confidence_const = c.env_confidence;
  r.task_confidence_const = c.task_confidence;
  r.env_kl_const = c.env * 0.5 * d * (std::log(cfg.sigma) + 1.0 / cfg.sigma - 1.0);
  r.task_kl_const = c.task * 0.5 * ordered_sum(trace_parts);
  r.delta_const = r.env_confidence_const + r.task_confidence_const + r.env_kl_const + r.task_kl_const;
  r.total = r.empirical_risk + r.env_kl_term + r.task_kl_term + r.delta_const;
  return r;
}

}  // namespace

double harmonic_mean(std::span<const Index> sizes) {
  if (sizes.empty()) throw std::invalid_argument("harmonic mean of an empty list");
  double inv = 0.0;
  for (Index m : sizes) {
    if (m < 1) throw std::invalid_argument("sample sizes must be positive");
    inv += 1.0 / static_cast<double>(m);
  }
  return static_cast<double>(sizes.size()) / inv;
}

double kl_hyper(const VectorXd& w_Q, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
  const double d = static_cast<double>(w_Q.size());
  return w_Q.squaredNorm() / (2.0 * sigma) + 0.5 * d * (std::log(sigma) + 1.0 / sigma - 1.0);
}

double expected_task_kl(const RidgeOperator& op, const VectorXd& w_Q) {
  if (w_Q.size() != op.dim()) throw std::invalid_argument("dimension mismatch");
  const MatrixXd shifted = op.A - MatrixXd::Identity(op.dim(), op.dim());
  return 0.5 * ((shifted * w_Q + op.b).squaredNorm() + (shifted * shifted).trace());
}

double phi(double z) { return 0.5 * std::erfc(z / std::numbers::sqrt2); }

double phi_cvx(double z) { return z <= 0.0 ? 0.5 - z * kInvSqrt2Pi : phi(z); }

double phi_cvx_derivative(double z) {
  return z <= 0.0 ? -kInvSqrt2Pi : -kInvSqrt2Pi * std::exp(-0.5 * z * z);
}

double gibbs_error_classification(std::span<const TaskDataset> tasks,
                                  std::span<const RidgeOperator> ops, const VectorXd& w_Q,
                                  bool relaxed) {
  check_pairing(tasks, ops, w_Q);
  std::vector<double> per_task(tasks.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto& X = tasks[i].X();
    const VectorXd mean = ops[i].A * w_Q + ops[i].b;
    const MatrixXd AX = ops[i].A * X;
    // x^T (I + A A^T) x = ||x||^2 + ||A x||^2 for symmetric A.
    const VectorXd var = X.colwise().squaredNorm().transpose() + AX.colwise().squaredNorm().transpose();
    const VectorXd proj = X.transpose() * mean;
    double acc = 0.0;
    for (Index j = 0; j < X.cols(); ++j) {
      if (X.col(j).squaredNorm() == 0.0)
        throw std::invalid_argument("task '" + tasks[i].id() + "': zero feature vector");
      const double z = tasks[i].Y()(j) * proj(j) / std::sqrt(var(j));
      acc += relaxed ? phi_cvx(z) : phi(z);
    }
    per_task[i] = acc / static_cast<double>(X.cols());
  }
  return ordered_sum(per_task) / static_cast<double>(tasks.size());
}

double empirical_error_regression(std::span<const TaskDataset> tasks,
                                  std::span<const RidgeOperator> ops, const VectorXd& w_Q) {
  check_pairing(tasks, ops, w_Q);
  std::vector<double> per_task(tasks.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const VectorXd mean = ops[i].A * w_Q + ops[i].b;
    per_task[i] = (tasks[i].Y() - tasks[i].X().transpose() * mean).squaredNorm() /
                  static_cast<double>(tasks[i].size());
  }
  return ordered_sum(per_task) / static_cast<double>(tasks.size());
}

BoundReport bound_classification(std::span<const TaskDataset> tasks,
                                 std::span<const RidgeOperator> ops, const VectorXd& w_Q,
                                 const BoundConfig& cfg, bool relaxed) {
  return assemble_gaussian(tasks, ops, w_Q, cfg, gibbs_error_classification(tasks, ops, w_Q, relaxed));
}

BoundReport bound_regression(std::span<const TaskDataset> tasks,
                             std::span<const RidgeOperator> ops, const VectorXd& w_Q,
                             const BoundConfig& cfg) {
  return assemble_gaussian(tasks, ops, w_Q, cfg, empirical_error_regression(tasks, ops, w_Q));
}

namespace {

struct SubspaceParts {
  double empirical = 0.0;
  double norm_sq = 0.0;  // sum_i ||w_i||^2
};

// Per task i with alpha = C/m, G = X X^T, r = X Y and K = I + alpha M^T G M:
//   w   = alpha K^{-1} M^T r
//   L   = (1/m)||Y - X^T M w||^2 + beta ||w||^2
// Differentiating through w with lambda = K^{-1} dL/dw gives
//   dL/dM = (2/m)(G M w w^T - r w^T) + alpha (r lambda^T - G M w lambda^T - G M lambda w^T).
SubspaceParts subspace_terms(const MatrixXd& M, std::span<const TaskDataset> tasks,
                             const BoundConfig& cfg, MatrixXd* grad) {
  if (tasks.empty()) throw std::invalid_argument("no tasks");
  const double beta = 1.0 / (2.0 * cfg.sigma * std::sqrt(harmonic_mean(sample_sizes(tasks))));
  const double n = static_cast<double>(tasks.size());
  const Index k = M.cols();

  std::vector<double> emp(tasks.size()), norms(tasks.size());
  std::vector<MatrixXd> grads(grad ? tasks.size() : 0);
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto& task = tasks[i];
    if (task.dim() != M.rows()) throw std::invalid_argument("dimension mismatch");
    const double m = static_cast<double>(task.size());
    const double alpha = cfg.C / m;
    const MatrixXd GM = task.gram() * M;
    const MatrixXd K = MatrixXd::Identity(k, k) + alpha * (M.transpose() * GM);
    Eigen::LLT<MatrixXd> llt(K);
    const VectorXd Mr = M.transpose() * task.moment();
    const VectorXd w = alpha * llt.solve(Mr);
    const VectorXd GMw = GM * w;
    // ||Y - X^T M w||^2 = Y^T Y - 2 r^T M w + w^T M^T G M w
    const double residual = task.Y().squaredNorm() - 2.0 * Mr.dot(w) + w.dot(M.transpose() * GMw);
    emp[i] = std::max(residual, 0.0) / m;
    norms[i] = w.squaredNorm();
    if (grad) {
      const VectorXd dw = (2.0 / m) * (M.transpose() * GMw - Mr) + 2.0 * beta * w;
      const VectorXd lambda = llt.solve(dw);
      const VectorXd& r = task.moment();
      grads[i] = (2.0 / m) * (GMw - r) * w.transpose() +
                 alpha * ((r - GMw) * lambda.transpose() - (GM * lambda) * w.transpose());
    }
  }
  SubspaceParts parts;
  parts.empirical = ordered_sum(emp) / n;
  parts.norm_sq = ordered_sum(norms);
  if (grad) {
    grad->setZero(M.rows(), k);
    for (const auto& g : grads) *grad += g;
    *grad /= n;
  }
  return parts;
}

void check_stiefel(const MatrixXd& M, std::span<const TaskDataset> tasks) {
  if (tasks.empty()) throw std::invalid_argument("no tasks");
  if (M.rows() != tasks.front().dim() || M.cols() < 1 || M.cols() > M.rows())
    throw std::invalid_argument("M has wrong shape");
  if (orthonormality_error(M) > kOrthonormalTol)
    throw std::invalid_argument("M does not have orthonormal columns");
}

}  // namespace

double subspace_objective_unchecked(const MatrixXd& M, std::span<const TaskDataset> tasks,
                                    const BoundConfig& cfg, MatrixXd* grad) {
  const SubspaceParts p = subspace_terms(M, tasks, cfg, grad);
  const double beta = 1.0 / (2.0 * cfg.sigma * std::sqrt(harmonic_mean(sample_sizes(tasks))));
  return p.empirical + beta * p.norm_sq / static_cast<double>(tasks.size());
}

double subspace_objective(const MatrixXd& M, std::span<const TaskDataset> tasks,
                          const BoundConfig& cfg) {
  cfg.validate();
  check_stiefel(M, tasks);
  return subspace_objective_unchecked(M, tasks, cfg, nullptr);
}

MatrixXd subspace_objective_grad(const MatrixXd& M, std::span<const TaskDataset> tasks,
                                 const BoundConfig& cfg) {
  cfg.validate();
  check_stiefel(M, tasks);
  MatrixXd grad;
  subspace_objective_unchecked(M, tasks, cfg, &grad);
  return grad;
}

BoundReport bound_subspace(const MatrixXd& M, std::span<const TaskDataset> tasks,
                           const BoundConfig& cfg) {
  cfg.validate();
  check_stiefel(M, tasks);
  const Coefficients c = coefficients(tasks, cfg.delta);
  const SubspaceParts p = subspace_terms(M, tasks, cfg, nullptr);

  BoundReport r;
  r.n = c.n;
  r.m_bar = c.m_bar;
  r.env_coefficient = c.env;
  r.task_coefficient = c.task;
  r.empirical_risk = p.empirical;
  r.env_kl_term = 0.0;
  r.env_kl_symbolic = true;
  // KL(Q_i||P) = ||w_i||^2 / (2 sigma)
  r.task_kl_term = c.task * p.norm_sq / (2.0 * cfg.sigma);
  r.env_confidence_const = c.env_confidence;
  r.task_confidence_const = c.task_confidence;
  r.delta_const = r.env_confidence_const + r.task_confidence_const;
  r.total = r.empirical_risk + r.env_kl_term + r.task_kl_term + r.delta_const;
  return r;
}

namespace {

void check_distribution(std::span<const double> p, const char* name) {
  double s = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v))
      throw std::invalid_argument(std::string(name) + " has a negative or non-finite entry");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-9) throw std::invalid_argument(std::string(name) + " does not sum to 1");
}

}  // namespace

ChangeOfMeasure verify_change_of_measure(std::span<const double> P, std::span<const double> Q,
                                         std::span<const double> g, double lambda) {
  if (P.size() != Q.size() || P.size() != g.size() || P.empty())
    throw std::invalid_argument("P, Q and g must share a nonempty support");
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
  check_distribution(P, "P");
  check_distribution(Q, "Q");

  ChangeOfMeasure out;
  double kl = 0.0;
  for (std::size_t i = 0; i < P.size(); ++i) {
    out.lhs += Q[i] * g[i];
    if (Q[i] > 0.0) {
      if (P[i] == 0.0) {
        out.infinite_kl = true;
        continue;
      }
      kl += Q[i] * std::log(Q[i] / P[i]);
    }
  }
  if (out.infinite_kl) {
    out.rhs = std::numeric_limits<double>::infinity();
    out.holds = true;
    return out;
  }
  // log E_P exp(lambda g) via log-sum-exp over the support of P.
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < P.size(); ++i)
    if (P[i] > 0.0) peak = std::max(peak, std::log(P[i]) + lambda * g[i]);
  double acc = 0.0;
  for (std::size_t i = 0; i < P.size(); ++i)
    if (P[i] > 0.0) acc += std::exp(std::log(P[i]) + lambda * g[i] - peak);
  const double log_mgf = peak + std::log(acc);
  out.rhs = (kl + log_mgf) / lambda;
  out.holds = out.lhs <= out.rhs + 1e-12;
  return out;
}

HoeffdingCheck verify_hoeffding(std::span<const double> values, std::span<const double> probs,
                                double a, double b, double lambda) {
  if (values.size() != probs.size() || values.empty())
    throw std::invalid_argument("values and probabilities must match");
  if (!(a <= b)) throw std::invalid_argument("need a <= b");
  check_distribution(probs, "probs");
  double mean = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] < a || values[i] > b) throw std::invalid_argument("value outside [a, b]");
    mean += probs[i] * values[i];
  }
  HoeffdingCheck out;
  for (std::size_t i = 0; i < values.size(); ++i)
    out.lhs += probs[i] * std::exp(lambda * (mean - values[i]));
  out.rhs = std::exp(lambda * lambda * (b - a) * (b - a) / 8.0);
  out.holds = out.lhs <= out.rhs * (1.0 + 1e-12);
  return out;
}

}  // namespace pbll
