#include "pbll/harness.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <mutex>
#include <numeric>
#include <stdexcept>

#include "pbll/errors.hpp"
#include "pbll/parallel.hpp"
#include "pbll/random.hpp"
#include "pbll/ridge.hpp"

namespace pbll {

std::string to_string(Method m) {
  switch (m) {
    case Method::PLG: return "PLG";
    case Method::PLL: return "PLL";
    case Method::ARR: return "ARR";
    case Method::Independent: return "Independent";
  }
  return "?";
}

Method parse_method(const std::string& text) {
  if (text == "PLG" || text == "plg") return Method::PLG;
  if (text == "PLL" || text == "pll") return Method::PLL;
  if (text == "ARR" || text == "arr") return Method::ARR;
  if (text == "Independent" || text == "independent") return Method::Independent;
  throw ConfigError("unknown method '" + text + "'");
}

std::vector<double> default_c_grid() { return {1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3}; }

void Protocol::validate(Index total_tasks) const {
  if (n_holdout < 1 || n_holdout >= total_tasks)
    throw ConfigError("n_holdout must be in [1, #tasks - 1]");
  if (repetitions < 1) throw ConfigError("repetitions must be positive");
  if (observed_fractions.empty()) throw ConfigError("observed_fractions is empty");
  for (double f : observed_fractions)
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("observed fractions must lie in (0, 1]");
  if (!std::is_sorted(observed_fractions.begin(), observed_fractions.end()))
    throw ConfigError("observed fractions must be sorted ascending");
  if (c_grid.empty()) throw ConfigError("C grid is empty");
  for (double c : c_grid)
    if (!(c > 0.0) || !std::isfinite(c)) throw ConfigError("C grid values must be positive");
  if (folds < 3) throw ConfigError("folds must be at least 3");
  if (!(heldout_train_fraction > 0.0 && heldout_train_fraction < 1.0))
    throw ConfigError("heldout_train_fraction must lie in (0, 1)");
}

Metric Protocol::resolved_metric(TaskKind kind) const {
  if (metric) return *metric;
  return kind == TaskKind::Classification ? Metric::AUC : Metric::MSE;
}

std::vector<Index> Protocol::observed_counts(Index pool_size) const {
  std::vector<Index> counts;
  for (double f : observed_fractions) {
    const auto n = static_cast<Index>(std::llround(f * static_cast<double>(pool_size)));
    counts.push_back(std::clamp<Index>(n, 1, pool_size));
  }
  return counts;
}

TransferModel learn_transfer(Method method, std::span<const TaskDataset> observed, double C,
                             const LearnerSettings& settings) {
  TransferModel model;
  model.method = method;
  if (method == Method::Independent) return model;
  if (observed.empty()) throw std::invalid_argument("transfer learning needs observed tasks");
  BoundConfig cfg = settings.bound;
  cfg.C = C;
  switch (method) {
    case Method::PLG:
      model.prior_mean = observed.front().kind() == TaskKind::Regression
                             ? solve_plg_regression(observed, cfg).mean
                             : solve_plg_classification(observed, cfg, settings.cg).mean;
      break;
    case Method::ARR:
      model.prior_mean = arr_prior(observed, C);
      break;
    case Method::PLL: {
      auto init = init_subspace(observed, settings.subspace_dim, settings.init, settings.init_seed, C);
      model.subspace = solve_pll(observed, settings.subspace_dim, cfg, settings.curvilinear,
                                 std::move(init.point));
      break;
    }
    case Method::Independent:
      break;
  }
  return model;
}

LinearPredictor adapt_to_task(const TransferModel& model, const TaskDataset& train, double C) {
  switch (model.method) {
    case Method::PLG:
    case Method::ARR:
      return {posterior_mean(fit_ridge_operator(train, C), model.prior_mean), train.kind()};
    case Method::PLL: {
      const MatrixXd& M = model.subspace->matrix();
      return {M * fit_subspace_ridge(train, C, M), train.kind()};
    }
    case Method::Independent:
      return fit_independent(train, C);
  }
  throw std::logic_error("unhandled method");
}

namespace {

// Consecutive, near-equal blocks of [0, m); the first m % parts blocks get one extra.
std::vector<std::vector<Index>> blocks(Index m, int parts) {
  std::vector<std::vector<Index>> out(static_cast<std::size_t>(parts));
  const Index base = m / parts;
  const Index extra = m % parts;
  Index next = 0;
  for (int p = 0; p < parts; ++p) {
    const Index len = base + (p < extra ? 1 : 0);
    for (Index i = 0; i < len; ++i) out[static_cast<std::size_t>(p)].push_back(next++);
  }
  return out;
}

std::vector<Index> permutation(Index n, Rng& rng) {
  std::vector<Index> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), Index{0});
  for (Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Index>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
  }
  return p;
}

double mean_or_nan(const std::vector<double>& values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

double transfer_cv_score(std::span<const TaskDataset> tasks, Method method, double C, int folds,
                         const LearnerSettings& settings, Metric metric) {
  std::vector<double> values;
  for (int r = 0; r < folds; ++r) {
    std::vector<TaskDataset> prior_parts;
    std::vector<TaskDataset> train_parts;
    std::vector<TaskDataset> test_parts;
    for (const auto& t : tasks) {
      const auto parts = blocks(t.size(), folds);
      prior_parts.push_back(t.select(parts[static_cast<std::size_t>(r)]));
      train_parts.push_back(t.select(parts[static_cast<std::size_t>((r + 1) % folds)]));
      test_parts.push_back(t.select(parts[static_cast<std::size_t>((r + 2) % folds)]));
    }
    const TransferModel model = learn_transfer(method, prior_parts, C, settings);
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      const LinearPredictor pred = adapt_to_task(model, train_parts[i], C);
      if (auto v = score_metric(metric, pred.scores(test_parts[i].X()), test_parts[i].Y(), 1.0))
        values.push_back(*v);
    }
  }
  return mean_or_nan(values);
}

double independent_cv_score(std::span<const TaskDataset> tasks, double C, int folds, Metric metric) {
  std::vector<double> values;
  for (const auto& t : tasks) {
    const auto parts = blocks(t.size(), folds);
    for (int f = 0; f < folds; ++f) {
      std::vector<Index> train;
      for (int g = 0; g < folds; ++g)
        if (g != f) train.insert(train.end(), parts[static_cast<std::size_t>(g)].begin(),
                                 parts[static_cast<std::size_t>(g)].end());
      const TaskDataset test_part = t.select(parts[static_cast<std::size_t>(f)]);
      const LinearPredictor pred = fit_independent(t.select(train), C);
      if (auto v = score_metric(metric, pred.scores(test_part.X()), test_part.Y(), 1.0))
        values.push_back(*v);
    }
  }
  return mean_or_nan(values);
}

}  // namespace

double cv_select_C(std::span<const TaskDataset> tasks, Method method, std::span<const double> grid,
                   int folds, const LearnerSettings& settings, Metric metric) {
  if (grid.empty()) throw std::invalid_argument("empty C grid");
  if (folds < (method == Method::Independent ? 2 : 3))
    throw std::invalid_argument("too few folds for this method");
  for (double c : grid)
    if (!(c > 0.0) || !std::isfinite(c)) throw std::invalid_argument("C grid values must be positive");

  std::vector<TaskDataset> eligible;
  for (const auto& t : tasks) {
    if (t.size() >= folds)
      eligible.push_back(t);
    else
      std::clog << "warning: task '" << t.id() << "' has " << t.size() << " < " << folds
                << " samples; excluded from cross-validation\n";
  }
  if (eligible.empty()) throw DataError("no task has enough samples for cross-validation");
  if (grid.size() == 1) return grid.front();

  std::vector<double> sorted(grid.begin(), grid.end());
  std::sort(sorted.begin(), sorted.end());
  const bool maximize = higher_is_better(metric);
  double best_c = sorted.front();
  double best_score = std::numeric_limits<double>::quiet_NaN();
  for (double C : sorted) {
    const double score = method == Method::Independent
                             ? independent_cv_score(eligible, C, folds, metric)
                             : transfer_cv_score(eligible, method, C, folds, settings, metric);
    if (std::isnan(score)) continue;
    const bool better = std::isnan(best_score) || (maximize ? score > best_score : score < best_score);
    if (better) {
      best_score = score;
      best_c = C;
    }
  }
  return best_c;
}

std::vector<MetricReport> run_experiment(const TaskEnvironment& env, Method method,
                                         const Protocol& protocol, const LearnerSettings& settings,
                                         const TrainingObserver& observer) {
  env.validate();
  // Canonical id order: splits and shuffles then depend on the task set, not
  // on the order tasks were listed in.
  std::vector<TaskDataset> all = env.all_tasks();
  std::sort(all.begin(), all.end(), [](const TaskDataset& a, const TaskDataset& b) { return a.id() < b.id(); });
  const auto total = static_cast<Index>(all.size());
  protocol.validate(total);
  settings.bound.validate();
  const Metric metric = protocol.resolved_metric(env.kind());
  if (metric != Metric::MSE && env.kind() != TaskKind::Classification)
    throw ConfigError("metric " + to_string(metric) + " requires classification tasks");
  if (metric == Metric::MSE && env.kind() != TaskKind::Regression)
    throw ConfigError("metric MSE requires regression tasks");

  const Index pool_size = total - protocol.n_holdout;
  const std::vector<Index> counts = protocol.observed_counts(pool_size);
  const std::size_t n_fracs = counts.size();
  const auto reps = static_cast<std::size_t>(protocol.repetitions);

  std::vector<std::vector<double>> results(reps, std::vector<double>(n_fracs));
  std::mutex observer_mutex;

  parallel_for(reps, protocol.threads, [&](std::size_t rep) {
    const std::uint64_t rep_seed = derive_seed(protocol.seed, rep);
    Rng split_rng = make_stream(rep_seed, 0);
    const std::vector<Index> order = permutation(total, split_rng);

    // Per-task sample shuffles come from their own substreams, keyed by the
    // task's position in the environment.
    auto shuffled = [&](Index task_index) {
      Rng rng = make_stream(rep_seed, 1 + static_cast<std::uint64_t>(task_index));
      const auto& t = all[static_cast<std::size_t>(task_index)];
      return t.select(permutation(t.size(), rng));
    };

    struct Split {
      TaskDataset train;
      TaskDataset test;
    };
    std::vector<Split> heldout;
    for (Index h = 0; h < protocol.n_holdout; ++h) {
      TaskDataset t = shuffled(order[static_cast<std::size_t>(h)]);
      if (t.size() < 2) {
        std::clog << "warning: held-out task '" << t.id() << "' has fewer than 2 samples; skipped\n";
        continue;
      }
      const Index n_train = std::clamp<Index>(
          static_cast<Index>(std::llround(protocol.heldout_train_fraction * static_cast<double>(t.size()))), 1,
          t.size() - 1);
      std::vector<Index> train_idx(static_cast<std::size_t>(n_train));
      std::vector<Index> test_idx(static_cast<std::size_t>(t.size() - n_train));
      std::iota(train_idx.begin(), train_idx.end(), Index{0});
      std::iota(test_idx.begin(), test_idx.end(), n_train);
      heldout.push_back({t.select(train_idx), t.select(test_idx)});
    }
    if (heldout.empty()) throw DataError("no usable held-out task");

    auto evaluate = [&](const auto& predictor_for) {
      std::vector<double> values;
      for (std::size_t h = 0; h < heldout.size(); ++h) {
        const LinearPredictor pred = predictor_for(h);
        if (auto v = score_metric(metric, pred.scores(heldout[h].test.X()), heldout[h].test.Y(),
                                  env.label_scale))
          values.push_back(*v);
      }
      return mean_or_nan(values);
    };

    if (method == Method::Independent) {
      // No transfer: each held-out task picks its own C by ordinary CV on its
      // training split, so the value is the same for every observed fraction.
      const double value = evaluate([&](std::size_t h) {
        const TaskDataset& train = heldout[h].train;
        const int folds = static_cast<int>(std::min<Index>(protocol.folds, train.size()));
        double C = protocol.c_grid[protocol.c_grid.size() / 2];
        if (folds >= 2)
          C = cv_select_C(std::span(&train, 1), Method::Independent, protocol.c_grid, folds, settings, metric);
        else
          std::clog << "warning: held-out task '" << train.id() << "' too small for CV; using C = " << C << "\n";
        return fit_independent(train, C);
      });
      std::fill(results[rep].begin(), results[rep].end(), value);
      return;
    }

    std::vector<TaskDataset> pool;
    for (Index p = protocol.n_holdout; p < total; ++p) pool.push_back(shuffled(order[static_cast<std::size_t>(p)]));

    for (std::size_t fi = 0; fi < n_fracs; ++fi) {
      const std::span<const TaskDataset> observed(pool.data(), static_cast<std::size_t>(counts[fi]));
      const double C = cv_select_C(observed, method, protocol.c_grid, protocol.folds, settings, metric);
      const TransferModel model = learn_transfer(method, observed, C, settings);
      if (observer) {
        std::vector<std::string> ids;
        for (const auto& t : observed) ids.push_back(t.id());
        std::lock_guard lock(observer_mutex);
        observer(static_cast<int>(rep), counts[fi], ids);
      }
      results[rep][fi] = evaluate([&](std::size_t h) { return adapt_to_task(model, heldout[h].train, C); });
    }
  });

  std::vector<MetricReport> reports;
  for (std::size_t fi = 0; fi < n_fracs; ++fi) {
    MetricReport r;
    r.method = to_string(method);
    r.n_observed = counts[fi];
    r.metric = metric;
    for (std::size_t rep = 0; rep < reps; ++rep) {
      const double v = results[rep][fi];
      if (std::isfinite(v))
        r.per_rep.push_back(v);
      else
        std::clog << "warning: repetition " << rep << " produced no defined " << to_string(metric) << " value\n";
    }
    if (r.per_rep.empty()) throw DataError("no repetition produced a defined metric value");
    r.mean = mean_or_nan(r.per_rep);
    if (r.per_rep.size() > 1) {
      double ss = 0.0;
      for (double v : r.per_rep) ss += (v - r.mean) * (v - r.mean);
      const double k = static_cast<double>(r.per_rep.size());
      r.std_error = std::sqrt(ss / (k - 1.0)) / std::sqrt(k);
    }
    reports.push_back(std::move(r));
  }
  return reports;
}

}  // namespace pbll
