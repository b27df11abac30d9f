#include "doctest.h"

#include "oracles.hpp"
#include "pbll/bound.hpp"
#include "pbll/errors.hpp"
#include "pbll/metrics.hpp"
#include "pbll/pll.hpp"

using namespace pbll;

namespace {

// Dense Cayley transform straight from its definition.
MatrixXd cayley_dense(const MatrixXd& M, const MatrixXd& G, double tau) {
  const Index d = M.rows();
  const MatrixXd W = G * M.transpose() - M * G.transpose();
  const MatrixXd I = MatrixXd::Identity(d, d);
  return (I + 0.5 * tau * W).fullPivLu().solve((I - 0.5 * tau * W) * M);
}

std::vector<TaskDataset> reg_tasks(oracle::Gen& g, int n, Index d, int m) {
  std::vector<TaskDataset> tasks;
  for (int i = 0; i < n; ++i) tasks.push_back(oracle::regression_task(g, d, m, "r" + std::to_string(i)));
  return tasks;
}

}  // namespace

TEST_SUITE("pll") {

TEST_CASE("Stiefel point validation") {
  oracle::Gen g(51);
  CHECK_NOTHROW(StiefelPoint(g.stiefel(5, 2)));
  CHECK_THROWS_AS(StiefelPoint(MatrixXd::Ones(5, 2)), std::invalid_argument);
  CHECK_THROWS_AS(StiefelPoint(g.stiefel(3, 3).leftCols(0)), std::invalid_argument);
  CHECK_THROWS_AS(StiefelPoint(MatrixXd::Identity(2, 3)), std::invalid_argument);
  CurvilinearConfig c;
  c.tau_min = 2.0;
  c.tau_max = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("Cayley retraction") {
  oracle::Gen g(52);
  SUBCASE("zero gradient is a fixed point") {
    const StiefelPoint M(g.stiefel(6, 2));
    for (double tau : {0.1, 1.0, 100.0}) CHECK(cayley_retract(M, MatrixXd::Zero(6, 2), tau).matrix() == M.matrix());
  }
  SUBCASE("stays on the manifold and matches the dense formula") {
    for (int rep = 0; rep < 200; ++rep) {
      const Index d = g.integer(2, 12), k = g.integer(1, static_cast<int>(d));
      const StiefelPoint M(g.stiefel(d, k));
      const MatrixXd G = g.gauss(d, k) * g.uniform(0.01, 10);
      const double tau = std::pow(10.0, g.uniform(-4, 3));
      const StiefelPoint Y = cayley_retract(M, G, tau);
      CHECK(orthonormality_error(Y.matrix()) <= 1e-10);
      CHECK(oracle::rel_err(Y.matrix(), cayley_dense(M.matrix(), G, tau)) < 1e-8);
    }
  }
  SUBCASE("tangent at zero is -W M") {
    for (int rep = 0; rep < 10; ++rep) {
      const StiefelPoint M(g.stiefel(7, 3));
      const MatrixXd G = g.gauss(7, 3);
      const MatrixXd W = G * M.matrix().transpose() - M.matrix() * G.transpose();
      const double h = 1e-6;
      CHECK(cayley_retract(M, G, 0.0).matrix() == M.matrix());
      const MatrixXd fd = (cayley_retract(M, G, h).matrix() - M.matrix()) / h;
      CHECK(oracle::rel_err(fd, -W * M.matrix()) < 1e-4);
    }
  }
  SUBCASE("shape mismatch") {
    const StiefelPoint M(g.stiefel(4, 2));
    CHECK_THROWS_AS(cayley_retract(M, MatrixXd::Zero(4, 3), 1.0), std::invalid_argument);
  }
}

TEST_CASE("tangent projection") {
  oracle::Gen g(53);
  const MatrixXd M = g.stiefel(6, 3);
  CHECK(riemannian_grad_norm(M, M) < 1e-14);
  MatrixXd G = g.gauss(6, 3);
  G -= M * (M.transpose() * G);
  CHECK(riemannian_grad_norm(M, G) == doctest::Approx(G.norm()).epsilon(1e-12));
  const MatrixXd P = project_tangent(M, g.gauss(6, 3));
  const MatrixXd S = M.transpose() * P;
  CHECK((S + S.transpose()).norm() < 1e-12);
}

TEST_CASE("orthonormalize fixes signs") {
  oracle::Gen g(54);
  const MatrixXd M = g.stiefel(5, 3);
  MatrixXd noisy = M + 1e-9 * g.gauss(5, 3);
  const MatrixXd Q = orthonormalize(noisy);
  CHECK(orthonormality_error(Q) < 1e-14);
  CHECK((Q - M).norm() < 1e-8);
}

TEST_CASE("curvilinear search finds a dominant eigenspace") {
  oracle::Gen g(55);
  const Index d = 10, k = 3;
  const MatrixXd R = g.gauss(d, d);
  const MatrixXd A = R * R.transpose();
  const StiefelObjective f = [&](const MatrixXd& M, MatrixXd* grad) {
    if (grad) *grad = -2 * A * M;
    return -(M.transpose() * A * M).trace();
  };
  CurvilinearConfig cc;
  cc.grad_tol = 1e-9;
  cc.max_iters = 5000;
  const CurvilinearResult r = minimize_on_stiefel(f, StiefelPoint(g.stiefel(d, k)), cc);
  CHECK(r.converged);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(A);
  const MatrixXd top = es.eigenvectors().rightCols(k);
  CHECK(r.best_value == doctest::Approx(-es.eigenvalues().tail(k).sum()).epsilon(1e-10));
  CHECK(principal_angles(r.best, top).back() < 1e-4);
  CHECK(r.max_feasibility_error <= 1e-8);
  CHECK(r.best_value <= r.initial_value);
  for (const auto& s : r.steps) {
    CHECK(s.slope <= 0.0);
    CHECK(s.value <= s.reference + cc.armijo_c1 * s.tau * s.slope + 1e-12 * std::abs(s.reference));
  }
}

TEST_CASE("subspace initialization") {
  oracle::Gen g(56);
  SUBCASE("random QR is reproducible") {
    const auto a = random_stiefel(8, 3, 17), b = random_stiefel(8, 3, 17);
    CHECK(a.matrix() == b.matrix());
    CHECK(random_stiefel(8, 3, 18).matrix() != a.matrix());
    const auto tasks = reg_tasks(g, 3, 8, 10);
    CHECK(init_subspace(tasks, 3, InitStrategy::RandomQR, 17, 1.0).point.matrix() == a.matrix());
  }
  SUBCASE("single task and k = 1 gives the normalized ridge solution") {
    const auto tasks = reg_tasks(g, 1, 5, 10);
    const VectorXd b = oracle::ridge_posterior(tasks[0], 1.0, VectorXd::Zero(5));
    const auto init = init_subspace(tasks, 1, InitStrategy::SvdOfRidgeSolutions, 0, 1.0);
    CHECK_FALSE(init.padded);
    CHECK(oracle::rel_err(init.point.matrix().col(0), b / b.norm()) < 1e-12);
  }
  SUBCASE("noiseless subspace data recovers the span") {
    SyntheticSpec s;
    s.seed = 57;
    s.mode = SyntheticMode::SharedSubspace;
    s.d = 12;
    s.k = 2;
    s.n_tasks = 6;
    s.m_per_task = 30;
    s.noise_std = 0.0;
    const auto syn = generate_synthetic(s);
    // Weak regularization: the ridge solutions become the task vectors.
    const auto init = init_subspace(syn.env.observed, 2, InitStrategy::SvdOfRidgeSolutions, 0, 1e9);
    CHECK(principal_angles(init.point.matrix(), syn.truth).back() < 1e-6);
  }
  SUBCASE("rank deficiency pads with orthogonal directions") {
    const TaskDataset t = oracle::regression_task(g, 6, 10, "a");
    const std::vector<TaskDataset> tasks{t, TaskDataset("b", t.X(), t.Y(), TaskKind::Regression)};
    const auto init = init_subspace(tasks, 3, InitStrategy::SvdOfRidgeSolutions, 4, 1.0);
    CHECK(init.padded);
    CHECK(orthonormality_error(init.point.matrix()) < 1e-12);
    const VectorXd b = oracle::ridge_posterior(t, 1.0, VectorXd::Zero(6)).normalized();
    CHECK(std::abs(init.point.matrix().col(0).dot(b)) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("bad arguments") {
    const auto tasks = reg_tasks(g, 2, 4, 5);
    CHECK_THROWS_AS(init_subspace(tasks, 5, InitStrategy::RandomQR, 0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(parse_init_strategy("pca"), ConfigError);
    CHECK(parse_init_strategy("svd") == InitStrategy::SvdOfRidgeSolutions);
  }
}

TEST_CASE("solve_pll") {
  oracle::Gen g(58);
  const BoundConfig cfg{1.0, 0.05, 1.0};
  SUBCASE("full dimension is degenerate and stationary") {
    const auto tasks = reg_tasks(g, 3, 4, 10);
    const MatrixXd Q = g.stiefel(4, 4);
    CHECK(subspace_objective(Q, tasks, cfg) == doctest::Approx(subspace_objective(MatrixXd::Identity(4, 4), tasks, cfg)).epsilon(1e-12));
    CurvilinearResult diag;
    solve_pll(tasks, 4, cfg, {}, StiefelPoint(Q), &diag);
    CHECK(diag.converged);
    CHECK(diag.iterations == 0);
  }
  SUBCASE("descends, stays feasible and is a fixed point when restarted") {
    const auto tasks = reg_tasks(g, 5, 8, 15);
    CurvilinearResult diag;
    const StiefelPoint M = solve_pll(tasks, 2, cfg, {}, std::nullopt, &diag);
    CHECK(diag.best_value <= diag.initial_value);
    CHECK(diag.max_feasibility_error <= 1e-8);
    CHECK(orthonormality_error(M.matrix()) <= 1e-8);
    const double f = subspace_objective(M.matrix(), tasks, cfg);
    CurvilinearResult again;
    const StiefelPoint M2 = solve_pll(tasks, 2, cfg, {}, M, &again);
    CHECK(std::abs(subspace_objective(M2.matrix(), tasks, cfg) - f) < 1e-8);
    CHECK(f < subspace_objective(random_stiefel(8, 2, 3).matrix(), tasks, cfg));
  }
  SUBCASE("recovers a planted subspace") {
    SyntheticSpec s;
    s.seed = 59;
    s.mode = SyntheticMode::SharedSubspace;
    s.d = 20;
    s.k = 2;
    s.n_tasks = 30;
    s.m_per_task = 25;
    s.noise_std = 0.05;
    const auto syn = generate_synthetic(s);
    const auto init = init_subspace(syn.env.observed, 2, InitStrategy::RandomQR, 1, cfg.C);
    const StiefelPoint M = solve_pll(syn.env.observed, 2, cfg, {}, init.point);
    CHECK(principal_angles(M.matrix(), syn.truth).back() < 15.0 * M_PI / 180.0);
  }
  SUBCASE("rotated solutions have equal objectives") {
    const auto tasks = reg_tasks(g, 4, 6, 12);
    const StiefelPoint M = solve_pll(tasks, 2, cfg, {});
    CHECK(subspace_objective(M.matrix() * g.rotation(2), tasks, cfg) ==
          doctest::Approx(subspace_objective(M.matrix(), tasks, cfg)).epsilon(1e-12));
  }
}

}  // TEST_SUITE
