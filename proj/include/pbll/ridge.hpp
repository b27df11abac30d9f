#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "pbll/task_model.hpp"

namespace pbll {

/// Affine map taking a prior mean to the posterior mean of prior-centered
/// ridge regression on one task:
///
///   argmin_w ||w - w_P||^2 + (C/m) sum_j (y_j - <w, x_j>)^2  =  A w_P + b
///
/// with A = (I + (C/m) X X^T)^{-1} and b = (C/m) A X Y. A is symmetric with
/// spectrum in (0, 1].
struct RidgeOperator {
  MatrixXd A;
  VectorXd b;
  Index m = 0;
  double C = 0.0;

  Index dim() const { return b.size(); }
};

RidgeOperator fit_ridge_operator(const TaskDataset& task, double C);

std::vector<RidgeOperator> fit_ridge_operators(std::span<const TaskDataset> tasks, double C,
                                               unsigned threads = 1);

VectorXd posterior_mean(const RidgeOperator& op, const VectorXd& prior_mean);

/// Ridge regression restricted to span(B): returns the k coefficients
/// w = (C/m) (I_k + (C/m) B^T X X^T B)^{-1} B^T X Y. The ambient predictor is
/// B w. B must have orthonormal columns (checked to 1e-8).
VectorXd fit_subspace_ridge(const TaskDataset& task, double C, const MatrixXd& B);

/// Same closed form without the orthonormality check; used inside optimizers
/// and finite-difference probes where B is only approximately on the manifold.
VectorXd subspace_ridge_unchecked(const TaskDataset& task, double C, const MatrixXd& B);

/// ||B^T B - I||_F.
double orthonormality_error(const MatrixXd& B);

}  // namespace pbll
