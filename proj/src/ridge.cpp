#include "pbll/ridge.hpp"

#include <string>

#include "pbll/errors.hpp"
#include "pbll/parallel.hpp"

namespace pbll {

namespace {

constexpr double kOrthonormalTol = 1e-8;

void check_regularization(double C) {
  if (!(C > 0.0) || !std::isfinite(C)) throw std::invalid_argument("C must be positive");
}

}  // namespace

RidgeOperator fit_ridge_operator(const TaskDataset& task, double C) {
  check_regularization(C);
  const Index d = task.dim();
  const double scale = C / static_cast<double>(task.size());
  MatrixXd K = MatrixXd::Identity(d, d) + scale * task.gram();
  Eigen::LLT<MatrixXd> llt(K);
  if (llt.info() != Eigen::Success) throw NumericalError("ridge system is not positive definite");

  RidgeOperator op;
  // A itself is needed downstream (tr (A - I)^2, A^T A products), so it is
  // formed from the factorization; b comes from a direct solve.
  op.A = llt.solve(MatrixXd::Identity(d, d));
  op.A = 0.5 * (op.A + op.A.transpose()).eval();
  op.b = llt.solve(scale * task.moment());
  op.m = task.size();
  op.C = C;
  if (!op.A.allFinite() || !op.b.allFinite()) throw NumericalError("non-finite ridge operator");
  return op;
}

std::vector<RidgeOperator> fit_ridge_operators(std::span<const TaskDataset> tasks, double C,
                                               unsigned threads) {
  std::vector<RidgeOperator> ops(tasks.size());
  parallel_for(tasks.size(), threads, [&](std::size_t i) { ops[i] = fit_ridge_operator(tasks[i], C); });
  return ops;
}

VectorXd posterior_mean(const RidgeOperator& op, const VectorXd& prior_mean) {
  if (prior_mean.size() != op.dim())
    throw std::invalid_argument("prior mean has dimension " + std::to_string(prior_mean.size()) +
                                ", operator expects " + std::to_string(op.dim()));
  return op.A * prior_mean + op.b;
}

double orthonormality_error(const MatrixXd& B) {
  return (B.transpose() * B - MatrixXd::Identity(B.cols(), B.cols())).norm();
}

VectorXd subspace_ridge_unchecked(const TaskDataset& task, double C, const MatrixXd& B) {
  const double scale = C / static_cast<double>(task.size());
  const MatrixXd GB = task.gram() * B;
  MatrixXd K = MatrixXd::Identity(B.cols(), B.cols()) + scale * (B.transpose() * GB);
  Eigen::LLT<MatrixXd> llt(K);
  if (llt.info() != Eigen::Success) throw NumericalError("subspace ridge system is not positive definite");
  return llt.solve(scale * (B.transpose() * task.moment()));
}

VectorXd fit_subspace_ridge(const TaskDataset& task, double C, const MatrixXd& B) {
  check_regularization(C);
  if (B.rows() != task.dim() || B.cols() < 1 || B.cols() > B.rows())
    throw std::invalid_argument("subspace basis has wrong shape");
  if (orthonormality_error(B) > kOrthonormalTol)
    throw std::invalid_argument("subspace basis columns are not orthonormal");
  return subspace_ridge_unchecked(task, C, B);
}

}  // namespace pbll
