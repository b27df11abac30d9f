#pragma once

// Reference computations for tests. Everything here is written from the
// defining formulas with plain loops and generic numerics, without calling
// into the library's closed forms.

#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pbll/task_model.hpp"

namespace oracle {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Gen {
  std::mt19937_64 rng;
  explicit Gen(std::uint64_t seed) : rng(seed) {}

  double normal() { return std::normal_distribution<double>(0.0, 1.0)(rng); }
  double uniform(double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); }
  int integer(int a, int b) { return std::uniform_int_distribution<int>(a, b)(rng); }
  MatrixXd gauss(Index r, Index c) {
    MatrixXd M(r, c);
    for (Index j = 0; j < c; ++j)
      for (Index i = 0; i < r; ++i) M(i, j) = normal();
    return M;
  }
  VectorXd gvec(Index n) { return gauss(n, 1); }
  // Orthonormal d x k basis by Gram-Schmidt on Gaussian columns.
  MatrixXd stiefel(Index d, Index k) {
    MatrixXd M = gauss(d, k);
    for (Index j = 0; j < k; ++j) {
      for (int pass = 0; pass < 2; ++pass)
        for (Index i = 0; i < j; ++i) M.col(j) -= M.col(i).dot(M.col(j)) * M.col(i);
      M.col(j) /= M.col(j).norm();
    }
    return M;
  }
  MatrixXd rotation(Index k) { return stiefel(k, k); }
};

inline pbll::TaskDataset regression_task(Gen& g, Index d, Index m, const std::string& id = "t",
                                         double noise = 0.1) {
  MatrixXd X = g.gauss(d, m);
  VectorXd w = g.gvec(d);
  VectorXd Y(m);
  for (Index j = 0; j < m; ++j) Y(j) = X.col(j).dot(w) + noise * g.normal();
  return {id, X, Y, pbll::TaskKind::Regression};
}

inline pbll::TaskDataset classification_task(Gen& g, Index d, Index m, const std::string& id = "t",
                                             double flip = 0.1) {
  MatrixXd X = g.gauss(d, m);
  VectorXd w = g.gvec(d);
  VectorXd Y(m);
  for (Index j = 0; j < m; ++j) {
    Y(j) = X.col(j).dot(w) >= 0.0 ? 1.0 : -1.0;
    if (g.uniform(0, 1) < flip) Y(j) = -Y(j);
  }
  return {id, X, Y, pbll::TaskKind::Classification};
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }
inline double rel_err(const MatrixXd& a, const MatrixXd& b) { return (a - b).norm() / std::max(b.norm(), 1e-300); }
// Relative error with an absolute floor, for quantities that may be near zero.
inline double rel_err_floor(const MatrixXd& a, const MatrixXd& b, double floor) {
  return (a - b).norm() / std::max(b.norm(), floor);
}

using ScalarFn = std::function<double(const VectorXd&)>;
using MatrixFn = std::function<double(const MatrixXd&)>;

inline VectorXd fd_grad(const ScalarFn& f, const VectorXd& x, double h) {
  VectorXd g(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    VectorXd xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    g(i) = (f(xp) - f(xm)) / (2 * h);
  }
  return g;
}

inline MatrixXd fd_grad(const MatrixFn& f, const MatrixXd& M, double h) {
  MatrixXd g(M.rows(), M.cols());
  for (Index j = 0; j < M.cols(); ++j)
    for (Index i = 0; i < M.rows(); ++i) {
      MatrixXd p = M, q = M;
      p(i, j) += h;
      q(i, j) -= h;
      g(i, j) = (f(p) - f(q)) / (2 * h);
    }
  return g;
}

/// Minimizer of a convex quadratic known only through evaluations. Central
/// differences are exact on quadratics for any step, so gradients and
/// Hessian-vector products come from function values alone; linear CG then
/// solves the stationarity system. A few restarts clean up rounding.
inline VectorXd minimize_quadratic(const ScalarFn& f, Index n) {
  const double h = 1.0;
  auto grad = [&](const VectorXd& x) { return fd_grad(f, x, h); };
  VectorXd x = VectorXd::Zero(n);
  for (int restart = 0; restart < 4; ++restart) {
    const VectorXd g0 = grad(x);
    auto hess = [&](const VectorXd& v) { return VectorXd(grad(x + v) - g0); };
    // Solve H s = -g0.
    VectorXd s = VectorXd::Zero(n), r = -g0, p = r;
    double rr = r.squaredNorm();
    for (Index it = 0; it < 3 * n && rr > 1e-30; ++it) {
      const VectorXd Hp = hess(p);
      const double alpha = rr / p.dot(Hp);
      s += alpha * p;
      r -= alpha * Hp;
      const double rr_new = r.squaredNorm();
      p = r + (rr_new / rr) * p;
      rr = rr_new;
    }
    x += s;
  }
  return x;
}

/// Plain gradient descent with backtracking, for smooth convex objectives
/// with supplied gradient. Slow but generic.
inline VectorXd gradient_descent(const ScalarFn& f, const std::function<VectorXd(const VectorXd&)>& grad,
                                 VectorXd x, int iters) {
  double step = 1.0;
  double fx = f(x);
  for (int it = 0; it < iters; ++it) {
    const VectorXd g = grad(x);
    if (g.norm() < 1e-14) break;
    for (int bt = 0; bt < 80; ++bt) {
      const VectorXd y = x - step * g;
      const double fy = f(y);
      if (fy <= fx - 0.5 * step * g.squaredNorm()) {
        x = y;
        fx = fy;
        step *= 2.0;
        break;
      }
      step *= 0.5;
    }
  }
  return x;
}

// --- defining objectives, written with loops ---

/// ||w - w_P||^2 + (C/m) sum_j (y_j - <w, x_j>)^2
inline double ridge_objective(const pbll::TaskDataset& t, double C, const VectorXd& w_P, const VectorXd& w) {
  double loss = 0.0;
  for (Index j = 0; j < t.size(); ++j) {
    double p = 0.0;
    for (Index i = 0; i < t.dim(); ++i) p += w(i) * t.X()(i, j);
    loss += (t.Y()(j) - p) * (t.Y()(j) - p);
  }
  double reg = 0.0;
  for (Index i = 0; i < t.dim(); ++i) reg += (w(i) - w_P(i)) * (w(i) - w_P(i));
  return reg + C / static_cast<double>(t.size()) * loss;
}

/// ||v||^2 + (C/m) sum_j (y_j - <v, B^T x_j>)^2
inline double subspace_ridge_objective(const pbll::TaskDataset& t, double C, const MatrixXd& B, const VectorXd& v) {
  double loss = 0.0;
  for (Index j = 0; j < t.size(); ++j) {
    double p = 0.0;
    for (Index c = 0; c < B.cols(); ++c)
      for (Index i = 0; i < t.dim(); ++i) p += v(c) * B(i, c) * t.X()(i, j);
    loss += (t.Y()(j) - p) * (t.Y()(j) - p);
  }
  return v.squaredNorm() + C / static_cast<double>(t.size()) * loss;
}

/// Posterior mean by solving the ridge normal equations directly:
/// (I + (C/m) sum_j x_j x_j^T) w = w_P + (C/m) sum_j y_j x_j.
inline VectorXd ridge_posterior(const pbll::TaskDataset& t, double C, const VectorXd& w_P) {
  const Index d = t.dim();
  const double a = C / static_cast<double>(t.size());
  MatrixXd K = MatrixXd::Identity(d, d);
  VectorXd rhs = w_P;
  for (Index j = 0; j < t.size(); ++j)
    for (Index r = 0; r < d; ++r) {
      rhs(r) += a * t.Y()(j) * t.X()(r, j);
      for (Index c = 0; c < d; ++c) K(r, c) += a * t.X()(r, j) * t.X()(c, j);
    }
  return K.partialPivLu().solve(rhs);
}

inline double harmonic(const std::vector<pbll::TaskDataset>& tasks) {
  double s = 0.0;
  for (const auto& t : tasks) s += 1.0 / static_cast<double>(t.size());
  return static_cast<double>(tasks.size()) / s;
}

inline double gauss_tail(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }
inline double gauss_tail_cvx(double z) {
  return z <= 0.0 ? 0.5 - z / std::sqrt(2.0 * M_PI) : gauss_tail(z);
}

/// Right-hand side of the regression bound as a function of w_Q, up to
/// w-independent constants: KL coefficients times ||w||^2/(2 sigma) and
/// (1/2) sum ||w_i - w_Q||^2 where w_i is the posterior mean from prior w_Q,
/// plus mean squared training residual of the w_i.
inline double plg_regression_rhs(const std::vector<pbll::TaskDataset>& tasks, double C, double sigma,
                                 const VectorXd& w) {
  const double n = static_cast<double>(tasks.size());
  const double mb = harmonic(tasks);
  const double env_coef = 1.0 / std::sqrt(n) + 1.0 / (n * std::sqrt(mb));
  const double task_coef = 1.0 / (n * std::sqrt(mb));
  double emp = 0.0, task = 0.0;
  for (const auto& t : tasks) {
    const VectorXd wi = ridge_posterior(t, C, w);
    double loss = 0.0;
    for (Index j = 0; j < t.size(); ++j) {
      const double r = t.Y()(j) - wi.dot(t.X().col(j));
      loss += r * r;
    }
    emp += loss / static_cast<double>(t.size());
    task += 0.5 * (wi - w).squaredNorm();
  }
  return emp / n + env_coef * w.squaredNorm() / (2 * sigma) + task_coef * task;
}

/// Relaxed classification right-hand side, same constant convention.
inline double plg_classification_rhs(const std::vector<pbll::TaskDataset>& tasks, double C, double sigma,
                                     const VectorXd& w, bool relaxed) {
  const double n = static_cast<double>(tasks.size());
  const double mb = harmonic(tasks);
  const double env_coef = 1.0 / std::sqrt(n) + 1.0 / (n * std::sqrt(mb));
  const double task_coef = 1.0 / (n * std::sqrt(mb));
  const Index d = w.size();
  double emp = 0.0, task = 0.0;
  for (const auto& t : tasks) {
    const VectorXd wi = ridge_posterior(t, C, w);
    // A x_j: the linear part of the posterior map applied to x_j.
    double err = 0.0;
    for (Index j = 0; j < t.size(); ++j) {
      const VectorXd x = t.X().col(j);
      const VectorXd Ax = ridge_posterior(t, C, x) - ridge_posterior(t, C, VectorXd::Zero(d));
      const double z = t.Y()(j) * x.dot(wi) / std::sqrt(x.squaredNorm() + Ax.squaredNorm());
      err += relaxed ? gauss_tail_cvx(z) : gauss_tail(z);
    }
    emp += err / static_cast<double>(t.size());
    task += 0.5 * (wi - w).squaredNorm();
  }
  return emp / n + env_coef * w.squaredNorm() / (2 * sigma) + task_coef * task;
}

/// Mode-approximated subspace objective with the inner ridge solved by the
/// generic quadratic minimizer.
inline double subspace_objective(const std::vector<pbll::TaskDataset>& tasks, double C, double sigma,
                                 const MatrixXd& M) {
  const double n = static_cast<double>(tasks.size());
  const double mb = harmonic(tasks);
  double total = 0.0;
  for (const auto& t : tasks) {
    const VectorXd v = minimize_quadratic([&](const VectorXd& u) { return subspace_ridge_objective(t, C, M, u); },
                                          M.cols());
    double loss = 0.0;
    for (Index j = 0; j < t.size(); ++j) {
      const double r = t.Y()(j) - (M * v).dot(t.X().col(j));
      loss += r * r;
    }
    total += loss / static_cast<double>(t.size()) + v.squaredNorm() / (2 * sigma * std::sqrt(mb));
  }
  return total / n;
}

/// Mean and standard error of a sample.
struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};
inline MeanSe mean_se(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1) / n)};
}

}  // namespace oracle
