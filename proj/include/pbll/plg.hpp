#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pbll/ridge.hpp"
#include "pbll/task_model.hpp"

namespace pbll {

enum class Provenance { ClosedForm, ConjugateGradient };

std::string to_string(Provenance p);

/// Hyperposterior N(mean, I_d) over prior means.
struct GaussianHyperposterior {
  VectorXd mean;
  double sigma = 1.0;
  Provenance provenance = Provenance::ClosedForm;
};

struct CgConfig {
  int max_iters = 500;
  double grad_tol = 1e-6;
  // Restart with steepest descent every this many iterations; 0 means d.
  int restart_every = 0;
  double armijo_c1 = 1e-4;
  double backtrack = 0.5;
  double initial_step = 1.0;
  int max_backtracks = 60;

  void validate() const;
};

struct ValueGrad {
  double value = 0.0;
  VectorXd grad;
};

using SmoothObjective = std::function<ValueGrad(const VectorXd&)>;

struct CgResult {
  VectorXd x;
  double value = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  bool line_search_failed = false;
  // Objective at every accepted iterate, starting with x0.
  std::vector<double> values;
};

/// Nonlinear conjugate gradient, Polak-Ribiere+ with periodic restarts and a
/// backtracking Armijo line search. Returns the best iterate seen.
CgResult minimize_cg(const SmoothObjective& f, VectorXd x0, const CgConfig& cfg);

/// Right-hand side of the Gaussian classification bound, with phi replaced by
/// its convex relaxation, as a function of w_Q (constants dropped):
///   c_env ||w||^2 + c_task sum_i ||(A_i - I) w + b_i||^2 + (1/n) sum_i (1/m_i) sum_j phi_cvx(z_ij)
/// Per-sample margins are precomputed so repeated evaluation costs O(sum m_i d).
class PlgClassificationObjective {
 public:
  PlgClassificationObjective(std::span<const TaskDataset> tasks, std::span<const RidgeOperator> ops,
                             const BoundConfig& cfg);

  ValueGrad operator()(const VectorXd& w) const;
  Index dim() const { return dim_; }

 private:
  struct TaskTerms {
    MatrixXd margin_dirs;  // column j: y_j A x_j / s_j
    VectorXd margin_offsets;  // y_j x_j^T b / s_j
    MatrixXd shifted;      // A - I
    VectorXd b;
  };
  std::vector<TaskTerms> terms_;
  Index dim_ = 0;
  double env_coef_ = 0.0;   // (sqrt(n m_bar) + 1) / (2 sigma n sqrt(m_bar))
  double task_coef_ = 0.0;  // 1 / (2 n sqrt(m_bar))
};

ValueGrad plg_objective_grad(const VectorXd& w_Q, std::span<const TaskDataset> tasks,
                             std::span<const RidgeOperator> ops, const BoundConfig& cfg);

/// Squared-loss counterpart (regression bound right-hand side without constants).
ValueGrad plg_regression_objective_grad(const VectorXd& w_Q, std::span<const TaskDataset> tasks,
                                        std::span<const RidgeOperator> ops, const BoundConfig& cfg);

/// Stationarity system H w = -g of the regression objective; solve_plg_regression
/// returns H^{-1}(-g).
struct PlgRegressionSystem {
  MatrixXd H;
  VectorXd g;
};
PlgRegressionSystem plg_regression_system(std::span<const TaskDataset> tasks,
                                          std::span<const RidgeOperator> ops, const BoundConfig& cfg);

GaussianHyperposterior solve_plg_regression(std::span<const TaskDataset> tasks, const BoundConfig& cfg);

GaussianHyperposterior solve_plg_classification(std::span<const TaskDataset> tasks,
                                                const BoundConfig& cfg, const CgConfig& cg,
                                                CgResult* diagnostics = nullptr);

}  // namespace pbll
