#pragma once

#include <span>

#include <Eigen/Dense>

#include "pbll/ridge.hpp"
#include "pbll/task_model.hpp"

namespace pbll {

/// Itemized transfer-risk bound for n observed tasks.
///
/// The environment-level complexity KL(Q||P) enters with coefficient
/// 1/sqrt(n) + 1/(n sqrt(m_bar)) and the task-level sum of expected
/// KL(Q_i||P) with coefficient 1/(n sqrt(m_bar)), where m_bar is the harmonic
/// mean of the sample sizes (lambda = sqrt(n) and lambda = n sqrt(m_bar)).
///
/// Only the parts of the two KL terms that depend on the hyperposterior are
/// kept in env_kl_term / task_kl_term; their parameter-free remainders live in
/// delta_const together with the 1/8 and log(delta/2) terms, so that
///   total = empirical_risk + env_kl_term + task_kl_term + delta_const.
struct BoundReport {
  double empirical_risk = 0.0;
  double env_kl_term = 0.0;
  double task_kl_term = 0.0;
  double delta_const = 0.0;
  double total = 0.0;
  int n = 0;
  double m_bar = 0.0;

  double env_coefficient = 0.0;   // 1/sqrt(n) + 1/(n sqrt(m_bar))
  double task_coefficient = 0.0;  // 1/(n sqrt(m_bar))
  // Breakdown of delta_const.
  double env_confidence_const = 0.0;   // (1/sqrt(n)) (1/8 - log(delta/2))
  double task_confidence_const = 0.0;  // (1/sqrt(m_bar)) (1/8 - log(delta/2)/n)
  double env_kl_const = 0.0;           // coefficient * (d/2)(log sigma + 1/sigma - 1)
  double task_kl_const = 0.0;          // coefficient * (1/2) sum tr (A_i - I)^2
  // Set for the subspace model, whose hyperposterior KL is an unevaluated
  // constant (reported as 0).
  bool env_kl_symbolic = false;

  /// The optimized right-hand side bounds half the risk of the deterministic
  /// mean predictor; this is the bound on that risk itself.
  double deterministic_risk_bound() const { return 2.0 * total; }
};

double harmonic_mean(std::span<const Index> sizes);

/// KL(N(w, I) || N(0, sigma I)) = ||w||^2/(2 sigma) + (d/2)(log sigma + 1/sigma - 1).
double kl_hyper(const VectorXd& w_Q, double sigma);

/// E_{w_P ~ N(w_Q, I)} KL(N(A w_P + b, I) || N(w_P, I))
///   = (1/2)(||(A - I) w_Q + b||^2 + tr (A - I)^2).
double expected_task_kl(const RidgeOperator& op, const VectorXd& w_Q);

/// Gaussian upper tail, 1/2 (1 - erf(z / sqrt 2)).
double phi(double z);
/// Convex majorant of phi: linear tangent at 0 for z <= 0, phi for z > 0.
double phi_cvx(double z);
double phi_cvx_derivative(double z);

/// Empirical 0-1 error of the two-level Gibbs classifier, averaged per task
/// then over tasks. Uses phi_cvx when `relaxed`. Throws std::invalid_argument
/// on an all-zero feature vector.
double gibbs_error_classification(std::span<const TaskDataset> tasks,
                                  std::span<const RidgeOperator> ops, const VectorXd& w_Q,
                                  bool relaxed);

/// Mean squared residual of the mean predictors A_i w_Q + b_i.
double empirical_error_regression(std::span<const TaskDataset> tasks,
                                  std::span<const RidgeOperator> ops, const VectorXd& w_Q);

BoundReport bound_classification(std::span<const TaskDataset> tasks,
                                 std::span<const RidgeOperator> ops, const VectorXd& w_Q,
                                 const BoundConfig& cfg, bool relaxed);

BoundReport bound_regression(std::span<const TaskDataset> tasks,
                             std::span<const RidgeOperator> ops, const VectorXd& w_Q,
                             const BoundConfig& cfg);

/// Mode-approximated subspace objective
///   J(M) = (1/n) sum_i [ (1/m_i) ||Y_i - X_i^T M w_i(M)||^2 + ||w_i(M)||^2 / (2 sigma sqrt(m_bar)) ]
/// with w_i(M) the subspace ridge solution. M must be orthonormal to 1e-8.
double subspace_objective(const MatrixXd& M, std::span<const TaskDataset> tasks,
                          const BoundConfig& cfg);
/// Euclidean gradient dJ/dM (d x k), differentiated through w_i(M).
MatrixXd subspace_objective_grad(const MatrixXd& M, std::span<const TaskDataset> tasks,
                                 const BoundConfig& cfg);

/// Value and optional gradient without the orthonormality check.
double subspace_objective_unchecked(const MatrixXd& M, std::span<const TaskDataset> tasks,
                                    const BoundConfig& cfg, MatrixXd* grad);

/// Bound report for the subspace model at mode M: the empirical term and the
/// task-level term are the two parts of J(M); env_kl_term is symbolic.
BoundReport bound_subspace(const MatrixXd& M, std::span<const TaskDataset> tasks,
                           const BoundConfig& cfg);

struct ChangeOfMeasure {
  double lhs = 0.0;  // E_Q g
  double rhs = 0.0;  // (KL(Q||P) + log E_P exp(lambda g)) / lambda
  bool holds = false;
  bool infinite_kl = false;  // Q puts mass where P does not
};

/// Evaluates both sides of E_Q g <= (KL(Q||P) + log E_P e^{lambda g}) / lambda
/// by exact summation over a finite support.
ChangeOfMeasure verify_change_of_measure(std::span<const double> P, std::span<const double> Q,
                                         std::span<const double> g, double lambda);

struct HoeffdingCheck {
  double lhs = 0.0;  // E exp(lambda (E X - X))
  double rhs = 0.0;  // exp(lambda^2 (b - a)^2 / 8)
  bool holds = false;
};

/// Hoeffding's lemma for a discrete variable with the given support points
/// and probabilities, all inside [a, b].
HoeffdingCheck verify_hoeffding(std::span<const double> values, std::span<const double> probs,
                                double a, double b, double lambda);

}  // namespace pbll
