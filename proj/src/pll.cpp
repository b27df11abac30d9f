#include "pbll/pll.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <iostream>
#include <stdexcept>

#include "pbll/bound.hpp"
#include "pbll/errors.hpp"
#include "pbll/random.hpp"
#include "pbll/ridge.hpp"

namespace pbll {

StiefelPoint::StiefelPoint(MatrixXd M) : M_(std::move(M)) {
  if (M_.cols() < 1 || M_.cols() > M_.rows()) throw std::invalid_argument("Stiefel point needs 1 <= k <= d");
  if (!M_.allFinite()) throw std::invalid_argument("Stiefel point has non-finite entries");
  if (orthonormality_error(M_) > kTolerance)
    throw std::invalid_argument("matrix columns are not orthonormal");
}

void CurvilinearConfig::validate() const {
  if (max_iters < 0 || !(grad_tol >= 0.0) || !(tau_init > 0.0) || nonmonotone_window < 1 ||
      !(armijo_c1 > 0.0 && armijo_c1 < 1.0) || !(tau_min > 0.0) || !(tau_max >= tau_min) ||
      !(backtrack > 0.0 && backtrack < 1.0) || max_backtracks < 1 || reorthonormalize_every < 1)
    throw ConfigError("invalid curvilinear search configuration");
}

namespace {

MatrixXd cayley_curve(const MatrixXd& M, const MatrixXd& G, double tau) {
  const Index k = M.cols();
  // W = U V^T with U = [G, M], V = [M, -G]; then
  // Y(tau) = M - tau U (I + tau/2 V^T U)^{-1} V^T M.
  MatrixXd U(M.rows(), 2 * k), V(M.rows(), 2 * k);
  U << G, M;
  V << M, -G;
  const MatrixXd VU = V.transpose() * U;
  const MatrixXd VM = V.transpose() * M;
  for (double t = tau; std::abs(t) > 1e-300; t *= 0.5) {
    Eigen::FullPivLU<MatrixXd> lu(MatrixXd::Identity(2 * k, 2 * k) + 0.5 * t * VU);
    if (!lu.isInvertible()) continue;
    MatrixXd Y = M - t * (U * lu.solve(VM));
    if (!Y.allFinite()) continue;
    // Large t ||W|| loses orthonormality to cancellation; snap back to the
    // polar factor, which moves Y only by that rounding error.
    if (orthonormality_error(Y) <= 1e-13) return Y;
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(Y.transpose() * Y);
    if (es.info() == Eigen::Success && es.eigenvalues().minCoeff() > 0.5)
      Y = Y * (es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
               es.eigenvectors().transpose());
    return Y;
  }
  throw NumericalError("Cayley transform is singular for every step size");
}

}  // namespace

StiefelPoint cayley_retract(const StiefelPoint& M, const MatrixXd& G, double tau) {
  if (G.rows() != M.rows() || G.cols() != M.cols()) throw std::invalid_argument("gradient shape mismatch");
  if (tau == 0.0) return M;
  return StiefelPoint(cayley_curve(M.matrix(), G, tau));
}

MatrixXd project_tangent(const MatrixXd& M, const MatrixXd& G) {
  const MatrixXd MtG = M.transpose() * G;
  return G - M * (0.5 * (MtG + MtG.transpose()));
}

double riemannian_grad_norm(const MatrixXd& M, const MatrixXd& G) { return project_tangent(M, G).norm(); }

MatrixXd orthonormalize(const MatrixXd& M) {
  Eigen::HouseholderQR<MatrixXd> qr(M);
  MatrixXd Q = qr.householderQ() * MatrixXd::Identity(M.rows(), M.cols());
  const MatrixXd& R = qr.matrixQR();
  for (Index j = 0; j < M.cols(); ++j)
    if (R(j, j) < 0.0) Q.col(j) = -Q.col(j);
  return Q;
}

CurvilinearResult minimize_on_stiefel(const StiefelObjective& f, const StiefelPoint& init,
                                      const CurvilinearConfig& cfg) {
  cfg.validate();
  CurvilinearResult res;
  MatrixXd X = init.matrix();
  MatrixXd G;
  double F = f(X, &G);
  if (!std::isfinite(F)) throw NumericalError("objective is not finite at the initial point");
  res.initial_value = F;
  res.best = X;
  res.best_value = F;
  res.grad_norm = riemannian_grad_norm(X, G);
  res.max_feasibility_error = orthonormality_error(X);

  std::deque<double> window{F};
  double tau = cfg.tau_init;
  // W X = G - X G^T X: the descent direction of the Cayley curve.
  MatrixXd dtX = G - X * (G.transpose() * X);

  for (int it = 0; it < cfg.max_iters; ++it) {
    const double gnorm = riemannian_grad_norm(X, G);
    if (gnorm <= cfg.grad_tol) {
      res.converged = true;
      break;
    }
    // dF(Y(tau))/dtau at 0 = -||W||_F^2 / 2, written as a sum of squares so
    // rounding cannot make it positive.
    const MatrixXd XtG = X.transpose() * G;
    const double slope = -(0.5 * (XtG - XtG.transpose()).squaredNorm() + (G - X * XtG).squaredNorm());
    const double reference = *std::max_element(window.begin(), window.end());

    MatrixXd Y, GY;
    double FY = 0.0;
    bool accepted = false;
    for (int bt = 0; bt < cfg.max_backtracks; ++bt) {
      Y = cayley_curve(X, G, tau);
      FY = f(Y, &GY);
      if (std::isfinite(FY) && FY <= reference + cfg.armijo_c1 * tau * slope) {
        accepted = true;
        break;
      }
      tau *= cfg.backtrack;
    }
    if (!accepted) {
      // No decrease is resolvable at working precision from here.
      break;
    }
    res.steps.push_back({FY, reference, tau, slope});
    ++res.iterations;

    bool reorthonormalized = false;
    if (res.iterations % cfg.reorthonormalize_every == 0) {
      Y = orthonormalize(Y);
      FY = f(Y, &GY);
      reorthonormalized = true;
    }

    const MatrixXd dtY = GY - Y * (GY.transpose() * Y);
    const MatrixXd S = Y - X;
    const MatrixXd D = dtY - dtX;
    const double sy = std::abs(S.cwiseProduct(D).sum());
    if (sy > 0.0) {
      tau = (res.iterations % 2 == 1) ? S.squaredNorm() / sy : sy / D.squaredNorm();
    } else {
      tau = cfg.tau_init;
    }
    if (!std::isfinite(tau)) tau = cfg.tau_init;
    tau = std::clamp(tau, cfg.tau_min, cfg.tau_max);

    X = std::move(Y);
    G = std::move(GY);
    F = FY;
    dtX = dtY;
    res.max_feasibility_error = std::max(res.max_feasibility_error, orthonormality_error(X));

    window.push_back(F);
    if (static_cast<int>(window.size()) > cfg.nonmonotone_window) window.pop_front();
    if (reorthonormalized) {
      // The QR step may move the value slightly; restart the window from it.
      window.assign(1, F);
    }
    if (F < res.best_value) {
      res.best_value = F;
      res.best = X;
    }
  }
  MatrixXd Gbest;
  f(res.best, &Gbest);
  res.grad_norm = riemannian_grad_norm(res.best, Gbest);
  if (res.grad_norm <= cfg.grad_tol) res.converged = true;
  return res;
}

std::string to_string(InitStrategy s) {
  return s == InitStrategy::RandomQR ? "random_qr" : "svd_of_ridge_solutions";
}

InitStrategy parse_init_strategy(const std::string& text) {
  if (text == "random_qr") return InitStrategy::RandomQR;
  if (text == "svd_of_ridge_solutions" || text == "svd") return InitStrategy::SvdOfRidgeSolutions;
  throw ConfigError("unknown init strategy '" + text + "'");
}

StiefelPoint random_stiefel(Index d, Index k, std::uint64_t seed) {
  if (k < 1 || k > d) throw std::invalid_argument("need 1 <= k <= d");
  Rng rng = make_stream(seed, 0);
  return StiefelPoint(orthonormalize(gaussian_matrix(rng, d, k)));
}

SubspaceInit init_subspace(std::span<const TaskDataset> tasks, Index k, InitStrategy strategy,
                           std::uint64_t seed, double C) {
  if (tasks.empty()) throw std::invalid_argument("no tasks");
  const Index d = tasks.front().dim();
  if (k < 1 || k > d) throw std::invalid_argument("need 1 <= k <= d");
  if (strategy == InitStrategy::RandomQR) return {random_stiefel(d, k, seed), false};

  MatrixXd solutions(d, static_cast<Index>(tasks.size()));
  for (std::size_t i = 0; i < tasks.size(); ++i)
    solutions.col(static_cast<Index>(i)) = fit_ridge_operator(tasks[i], C).b;

  Eigen::JacobiSVD<MatrixXd> svd(solutions, Eigen::ComputeThinU);
  const auto& s = svd.singularValues();
  const double cutoff = (s.size() > 0 ? s(0) : 0.0) * 1e-10 * static_cast<double>(std::max(d, solutions.cols()));
  Index rank = 0;
  while (rank < s.size() && s(rank) > cutoff && s(rank) > 0.0) ++rank;
  const Index taken = std::min(rank, k);

  MatrixXd basis(d, k);
  basis.leftCols(taken) = svd.matrixU().leftCols(taken);
  const VectorXd total = solutions.rowwise().sum();
  for (Index j = 0; j < taken; ++j)
    if (basis.col(j).dot(total) < 0.0) basis.col(j) = -basis.col(j);

  bool padded = false;
  if (taken < k) {
    padded = true;
    std::clog << "warning: ridge solutions have rank " << rank << " < k = " << k
              << "; completing the basis with random directions\n";
    Rng rng = make_stream(seed, 1);
    MatrixXd extra = gaussian_matrix(rng, d, k - taken);
    const auto known = basis.leftCols(taken);
    // Two projection passes keep the completion orthogonal to working precision.
    for (int pass = 0; pass < 2; ++pass) extra -= known * (known.transpose() * extra);
    basis.rightCols(k - taken) = orthonormalize(extra);
    for (int pass = 0; pass < 2; ++pass)
      basis.rightCols(k - taken) -= known * (known.transpose() * basis.rightCols(k - taken));
    basis.rightCols(k - taken) = orthonormalize(basis.rightCols(k - taken));
  }
  return {StiefelPoint(std::move(basis)), padded};
}

StiefelPoint solve_pll(std::span<const TaskDataset> tasks, Index k, const BoundConfig& cfg,
                       const CurvilinearConfig& cc, std::optional<StiefelPoint> init,
                       CurvilinearResult* diagnostics) {
  cfg.validate();
  if (tasks.empty()) throw std::invalid_argument("no tasks");
  const Index d = tasks.front().dim();
  if (k < 1 || k > d) throw std::invalid_argument("need 1 <= k <= d");
  StiefelPoint start = init ? std::move(*init)
                            : init_subspace(tasks, k, InitStrategy::SvdOfRidgeSolutions, 0, cfg.C).point;
  if (start.rows() != d || start.cols() != k) throw std::invalid_argument("initial point has wrong shape");

  const StiefelObjective objective = [&](const MatrixXd& M, MatrixXd* grad) {
    return subspace_objective_unchecked(M, tasks, cfg, grad);
  };
  CurvilinearResult res = minimize_on_stiefel(objective, start, cc);
  StiefelPoint out(res.best);
  if (diagnostics) *diagnostics = std::move(res);
  return out;
}

}  // namespace pbll
