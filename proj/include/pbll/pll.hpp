#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pbll/task_model.hpp"

namespace pbll {

/// A d x k matrix with orthonormal columns (a point of the Stiefel manifold),
/// checked to ||M^T M - I||_F <= 1e-8 on construction.
class StiefelPoint {
 public:
  static constexpr double kTolerance = 1e-8;

  explicit StiefelPoint(MatrixXd M);

  const MatrixXd& matrix() const { return M_; }
  Index rows() const { return M_.rows(); }
  Index cols() const { return M_.cols(); }

 private:
  MatrixXd M_;
};

struct CurvilinearConfig {
  int max_iters = 1000;
  double grad_tol = 1e-5;  // on the projected (Riemannian) gradient norm
  double tau_init = 1e-2;
  int nonmonotone_window = 10;
  double armijo_c1 = 1e-4;
  double tau_min = 1e-10;
  double tau_max = 1e10;
  double backtrack = 0.5;
  int max_backtracks = 60;
  int reorthonormalize_every = 50;

  void validate() const;
};

/// Cayley curve Y(tau) = (I + tau/2 W)^{-1} (I - tau/2 W) M with
/// W = G M^T - M G^T. Evaluated through the rank-2k form, so the cost is
/// O(d k^2) rather than a d x d solve.
StiefelPoint cayley_retract(const StiefelPoint& M, const MatrixXd& G, double tau);

/// G - M sym(M^T G), the component of G tangent to the manifold at M.
MatrixXd project_tangent(const MatrixXd& M, const MatrixXd& G);
double riemannian_grad_norm(const MatrixXd& M, const MatrixXd& G);

/// Thin QR with a nonnegative R diagonal, so nearly orthonormal input maps
/// to the nearest-in-sign orthonormal basis.
MatrixXd orthonormalize(const MatrixXd& M);

/// Returns f(M) and, when grad is non-null, the Euclidean gradient into *grad.
using StiefelObjective = std::function<double(const MatrixXd& M, MatrixXd* grad)>;

struct CurvilinearStep {
  double value = 0.0;      // accepted objective
  double reference = 0.0;  // max over the nonmonotone window
  double tau = 0.0;
  double slope = 0.0;      // dF(Y(tau))/dtau at tau = 0, negative
};

struct CurvilinearResult {
  MatrixXd best;
  double best_value = 0.0;
  double initial_value = 0.0;
  double grad_norm = 0.0;  // Riemannian gradient norm at `best`
  int iterations = 0;
  bool converged = false;
  double max_feasibility_error = 0.0;  // over all iterates
  std::vector<CurvilinearStep> steps;
};

/// Gradient descent along Cayley curves with Barzilai-Borwein step sizes and a
/// nonmonotone (windowed max) Armijo safeguard. Re-orthonormalizes by QR every
/// `reorthonormalize_every` iterations. Returns the best iterate seen.
CurvilinearResult minimize_on_stiefel(const StiefelObjective& f, const StiefelPoint& init,
                                      const CurvilinearConfig& cfg);

enum class InitStrategy { RandomQR, SvdOfRidgeSolutions };

std::string to_string(InitStrategy s);
InitStrategy parse_init_strategy(const std::string& text);

StiefelPoint random_stiefel(Index d, Index k, std::uint64_t seed);

struct SubspaceInit {
  StiefelPoint point;
  // SvdOfRidgeSolutions only: the ridge solutions had rank < k and the basis
  // was completed with random orthogonal directions.
  bool padded = false;
};

/// RandomQR: QR of a seeded Gaussian matrix. SvdOfRidgeSolutions: top-k left
/// singular vectors of [b_1 ... b_n], the independent ridge solutions at C.
SubspaceInit init_subspace(std::span<const TaskDataset> tasks, Index k, InitStrategy strategy,
                           std::uint64_t seed, double C);

/// Minimizes the mode-approximated subspace objective over k-dimensional
/// subspaces. Without `init`, starts from the SVD of the ridge solutions.
StiefelPoint solve_pll(std::span<const TaskDataset> tasks, Index k, const BoundConfig& cfg,
                       const CurvilinearConfig& cc, std::optional<StiefelPoint> init = std::nullopt,
                       CurvilinearResult* diagnostics = nullptr);

}  // namespace pbll
