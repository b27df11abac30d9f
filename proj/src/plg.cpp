#include "pbll/plg.hpp"

#include <cmath>
#include <iostream>
#include <limits>
#include <stdexcept>

#include "pbll/bound.hpp"
#include "pbll/errors.hpp"

namespace pbll {

std::string to_string(Provenance p) {
  return p == Provenance::ClosedForm ? "closed_form" : "conjugate_gradient";
}

void CgConfig::validate() const {
  if (max_iters < 0 || !(grad_tol >= 0.0) || restart_every < 0 || !(armijo_c1 > 0.0 && armijo_c1 < 1.0) ||
      !(backtrack > 0.0 && backtrack < 1.0) || !(initial_step > 0.0) || max_backtracks < 1)
    throw ConfigError("invalid conjugate gradient configuration");
}

CgResult minimize_cg(const SmoothObjective& f, VectorXd x0, const CgConfig& cfg) {
  cfg.validate();
  const Index d = x0.size();
  const int restart = cfg.restart_every > 0 ? cfg.restart_every : static_cast<int>(std::max<Index>(d, 1));

  CgResult res;
  VectorXd x = std::move(x0);
  ValueGrad cur = f(x);
  if (!std::isfinite(cur.value)) throw NumericalError("objective is not finite at the start point");
  res.values.push_back(cur.value);

  VectorXd dir = -cur.grad;
  double step = cfg.initial_step;
  int since_restart = 0;
  for (int it = 0; it < cfg.max_iters; ++it) {
    if (cur.grad.norm() <= cfg.grad_tol) {
      res.converged = true;
      break;
    }
    double slope = cur.grad.dot(dir);
    if (!(slope < 0.0)) {
      dir = -cur.grad;
      slope = -cur.grad.squaredNorm();
      since_restart = 0;
    }

    // Backtracking Armijo, starting from the larger of the configured initial
    // step and twice the last accepted step scaled to the new direction.
    double t = step;
    ValueGrad trial;
    bool accepted = false;
    const double dir_norm = dir.norm();
    for (int bt = 0; bt < cfg.max_backtracks; ++bt) {
      // A step that no longer moves x cannot be a decrease.
      if (t * dir_norm <= 4 * std::numeric_limits<double>::epsilon() * (1.0 + x.norm())) break;
      trial = f(x + t * dir);
      if (std::isfinite(trial.value) && trial.value <= cur.value + cfg.armijo_c1 * t * slope) {
        accepted = true;
        break;
      }
      t *= cfg.backtrack;
    }
    if (accepted) {
      // Try the minimizer of the quadratic through f(0), f'(0) and f(t).
      const double curv = (trial.value - cur.value - slope * t) / (t * t);
      if (curv > 0.0) {
        const double tq = -slope / (2.0 * curv);
        if (std::isfinite(tq) && std::abs(tq - t) > 1e-3 * t) {
          ValueGrad q = f(x + tq * dir);
          if (std::isfinite(q.value) && q.value < trial.value &&
              q.value <= cur.value + cfg.armijo_c1 * tq * slope) {
            trial = std::move(q);
            t = tq;
          }
        }
      }
    }
    if (!accepted) {
      res.line_search_failed = true;
      std::clog << "warning: conjugate gradient line search failed after " << cfg.max_backtracks
                << " backtracks; returning current iterate\n";
      break;
    }

    const VectorXd step_vec = t * dir;
    x += step_vec;
    ++res.iterations;
    ++since_restart;
    res.values.push_back(trial.value);

    const double gg = cur.grad.squaredNorm();
    // Polak-Ribiere+: beta = max(0, g_new . (g_new - g_old) / ||g_old||^2)
    double beta = gg > 0.0 ? trial.grad.dot(trial.grad - cur.grad) / gg : 0.0;
    if (beta < 0.0 || since_restart >= restart) {
      beta = 0.0;
      since_restart = 0;
    }
    const double prev_dir_norm = dir.norm();
    dir = -trial.grad + beta * dir;
    // Carry the accepted step length over as the next initial trial.
    const double new_dir_norm = dir.norm();
    step = new_dir_norm > 0.0 ? std::max(cfg.initial_step, 2.0 * t * prev_dir_norm / new_dir_norm)
                              : cfg.initial_step;
    step = std::min(step, 1e10);
    cur = std::move(trial);
  }
  if (!res.converged && cur.grad.norm() <= cfg.grad_tol) res.converged = true;
  res.x = std::move(x);
  res.value = cur.value;
  res.grad_norm = cur.grad.norm();
  return res;
}

namespace {

struct GaussianCoefficients {
  double env;
  double task;
};

// (sqrt(n m_bar) + 1) / (2 sigma n sqrt(m_bar)) and 1 / (2 n sqrt(m_bar)).
GaussianCoefficients gaussian_coefficients(std::span<const TaskDataset> tasks, double sigma) {
  const double n = static_cast<double>(tasks.size());
  const double m_bar = harmonic_mean(sample_sizes(tasks));
  const double root = std::sqrt(m_bar);
  return {(std::sqrt(n * m_bar) + 1.0) / (2.0 * sigma * n * root), 1.0 / (2.0 * n * root)};
}

void check_inputs(std::span<const TaskDataset> tasks, std::span<const RidgeOperator> ops) {
  if (tasks.empty()) throw std::invalid_argument("no tasks");
  if (tasks.size() != ops.size()) throw std::invalid_argument("one ridge operator per task required");
  const Index d = tasks.front().dim();
  for (std::size_t i = 0; i < tasks.size(); ++i)
    if (tasks[i].dim() != d || ops[i].dim() != d) throw std::invalid_argument("dimension mismatch");
}

}  // namespace

PlgClassificationObjective::PlgClassificationObjective(std::span<const TaskDataset> tasks,
                                                       std::span<const RidgeOperator> ops,
                                                       const BoundConfig& cfg) {
  cfg.validate();
  check_inputs(tasks, ops);
  dim_ = tasks.front().dim();
  const auto coef = gaussian_coefficients(tasks, cfg.sigma);
  env_coef_ = coef.env;
  task_coef_ = coef.task;
  terms_.reserve(tasks.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto& X = tasks[i].X();
    const auto& Y = tasks[i].Y();
    const MatrixXd AX = ops[i].A * X;
    TaskTerms t;
    t.margin_dirs.resize(dim_, X.cols());
    t.margin_offsets.resize(X.cols());
    const VectorXd xb = X.transpose() * ops[i].b;
    for (Index j = 0; j < X.cols(); ++j) {
      const double xx = X.col(j).squaredNorm();
      if (xx == 0.0) throw std::invalid_argument("task '" + tasks[i].id() + "': zero feature vector");
      const double s = std::sqrt(xx + AX.col(j).squaredNorm());
      t.margin_dirs.col(j) = (Y(j) / s) * AX.col(j);
      t.margin_offsets(j) = Y(j) * xb(j) / s;
    }
    t.shifted = ops[i].A - MatrixXd::Identity(dim_, dim_);
    t.b = ops[i].b;
    terms_.push_back(std::move(t));
  }
}

ValueGrad PlgClassificationObjective::operator()(const VectorXd& w) const {
  if (w.size() != dim_) throw std::invalid_argument("dimension mismatch");
  const double n = static_cast<double>(terms_.size());
  ValueGrad out;
  out.value = env_coef_ * w.squaredNorm();
  out.grad = 2.0 * env_coef_ * w;
  for (const auto& t : terms_) {
    const VectorXd resid = t.shifted * w + t.b;
    out.value += task_coef_ * resid.squaredNorm();
    out.grad += 2.0 * task_coef_ * (t.shifted.transpose() * resid);

    const VectorXd z = t.margin_dirs.transpose() * w + t.margin_offsets;
    const double m = static_cast<double>(z.size());
    double loss = 0.0;
    VectorXd dz(z.size());
    for (Index j = 0; j < z.size(); ++j) {
      loss += phi_cvx(z(j));
      dz(j) = phi_cvx_derivative(z(j));
    }
    out.value += loss / (n * m);
    out.grad += (t.margin_dirs * dz) / (n * m);
  }
  return out;
}

ValueGrad plg_objective_grad(const VectorXd& w_Q, std::span<const TaskDataset> tasks,
                             std::span<const RidgeOperator> ops, const BoundConfig& cfg) {
  return PlgClassificationObjective(tasks, ops, cfg)(w_Q);
}

ValueGrad plg_regression_objective_grad(const VectorXd& w_Q, std::span<const TaskDataset> tasks,
                                        std::span<const RidgeOperator> ops, const BoundConfig& cfg) {
  cfg.validate();
  check_inputs(tasks, ops);
  if (w_Q.size() != tasks.front().dim()) throw std::invalid_argument("dimension mismatch");
  const auto coef = gaussian_coefficients(tasks, cfg.sigma);
  const double n = static_cast<double>(tasks.size());
  const Index d = w_Q.size();
  ValueGrad out;
  out.value = coef.env * w_Q.squaredNorm();
  out.grad = 2.0 * coef.env * w_Q;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const MatrixXd shifted = ops[i].A - MatrixXd::Identity(d, d);
    const VectorXd resid = shifted * w_Q + ops[i].b;
    out.value += coef.task * resid.squaredNorm();
    out.grad += 2.0 * coef.task * (shifted.transpose() * resid);

    const double m = static_cast<double>(tasks[i].size());
    const VectorXd mean = ops[i].A * w_Q + ops[i].b;
    const VectorXd err = tasks[i].X().transpose() * mean - tasks[i].Y();
    out.value += err.squaredNorm() / (n * m);
    out.grad += (2.0 / (n * m)) * (ops[i].A.transpose() * (tasks[i].X() * err));
  }
  return out;
}

PlgRegressionSystem plg_regression_system(std::span<const TaskDataset> tasks,
                                          std::span<const RidgeOperator> ops, const BoundConfig& cfg) {
  cfg.validate();
  check_inputs(tasks, ops);
  const auto coef = gaussian_coefficients(tasks, cfg.sigma);
  const double n = static_cast<double>(tasks.size());
  const Index d = tasks.front().dim();

  // With A'_i = A_i - I:
  //   D = (2/n) sum (1/m_i) A_i^T X_i X_i^T A_i
  //   c = (2/n) sum (1/m_i) (A_i^T X_i X_i^T b_i - A_i^T X_i Y_i)
  //   H = D + 2 c_env I + 2 c_task sum A'^T A',  g = c + 2 c_task sum A'^T b
  PlgRegressionSystem sys;
  sys.H = 2.0 * coef.env * MatrixXd::Identity(d, d);
  sys.g = VectorXd::Zero(d);
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto& A = ops[i].A;
    const auto& b = ops[i].b;
    const double m = static_cast<double>(tasks[i].size());
    const MatrixXd shifted = A - MatrixXd::Identity(d, d);
    const MatrixXd GA = tasks[i].gram() * A;
    sys.H += (2.0 / (n * m)) * (A.transpose() * GA);
    sys.H += 2.0 * coef.task * (shifted.transpose() * shifted);
    sys.g += (2.0 / (n * m)) * (A.transpose() * (tasks[i].gram() * b - tasks[i].moment()));
    sys.g += 2.0 * coef.task * (shifted.transpose() * b);
  }
  sys.H = 0.5 * (sys.H + sys.H.transpose()).eval();
  return sys;
}

GaussianHyperposterior solve_plg_regression(std::span<const TaskDataset> tasks, const BoundConfig& cfg) {
  cfg.validate();
  if (tasks.empty()) throw std::invalid_argument("no tasks");
  const auto ops = fit_ridge_operators(tasks, cfg.C);
  const auto sys = plg_regression_system(tasks, ops, cfg);
  Eigen::LLT<MatrixXd> llt(sys.H);
  if (llt.info() != Eigen::Success) throw NumericalError("regression stationarity system is not positive definite");
  GaussianHyperposterior out;
  out.mean = llt.solve(-sys.g);
  if (!out.mean.allFinite()) throw NumericalError("non-finite hyperposterior mean");
  out.sigma = cfg.sigma;
  out.provenance = Provenance::ClosedForm;
  return out;
}

GaussianHyperposterior solve_plg_classification(std::span<const TaskDataset> tasks,
                                                const BoundConfig& cfg, const CgConfig& cg,
                                                CgResult* diagnostics) {
  cfg.validate();
  if (tasks.empty()) throw std::invalid_argument("no tasks");
  const auto ops = fit_ridge_operators(tasks, cfg.C);
  const PlgClassificationObjective objective(tasks, ops, cfg);
  CgResult res = minimize_cg([&](const VectorXd& w) { return objective(w); },
                             VectorXd::Zero(objective.dim()), cg);
  if (!res.x.allFinite()) throw NumericalError("non-finite hyperposterior mean");
  GaussianHyperposterior out;
  out.mean = res.x;
  out.sigma = cfg.sigma;
  out.provenance = Provenance::ConjugateGradient;
  if (diagnostics) *diagnostics = std::move(res);
  return out;
}

}  // namespace pbll
