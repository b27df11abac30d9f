#include "doctest.h"

#include <set>

#include "oracles.hpp"
#include "pbll/errors.hpp"
#include "pbll/harness.hpp"

using namespace pbll;

namespace {

TaskEnvironment prototype_env(std::uint64_t seed, Index n, Index d = 5, Index m = 20) {
  SyntheticSpec s;
  s.seed = seed;
  s.d = d;
  s.n_tasks = n;
  s.m_per_task = m;
  s.noise_std = 0.1;
  return generate_synthetic(s).env;
}

Protocol small_protocol(std::uint64_t seed) {
  Protocol p;
  p.seed = seed;
  p.repetitions = 3;
  p.n_holdout = 2;
  p.observed_fractions = {0.5, 1.0};
  p.c_grid = {0.1, 1.0, 10.0};
  return p;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("protocol validation and observed counts") {
  Protocol p;
  CHECK_NOTHROW(p.validate(10));
  CHECK_THROWS_AS(p.validate(1), ConfigError);
  p.observed_fractions = {0.5, 0.2};
  CHECK_THROWS_AS(p.validate(10), ConfigError);
  p = {};
  p.c_grid = {};
  CHECK_THROWS_AS(p.validate(10), ConfigError);
  p = {};
  p.folds = 2;
  CHECK_THROWS_AS(p.validate(10), ConfigError);
  p = {};
  p.observed_fractions = {0.01, 0.5, 1.0};
  const auto c = p.observed_counts(9);
  CHECK(c == std::vector<Index>{1, 5, 9});
  CHECK(p.resolved_metric(TaskKind::Classification) == Metric::AUC);
  CHECK(p.resolved_metric(TaskKind::Regression) == Metric::MSE);
  CHECK(parse_method("pll") == Method::PLL);
  CHECK_THROWS_AS(parse_method("ella"), ConfigError);
}

TEST_CASE("cross-validation of C") {
  oracle::Gen g(71);
  const LearnerSettings settings;
  SUBCASE("single grid value is returned without fitting, but inputs are validated") {
    std::vector<TaskDataset> tasks{oracle::regression_task(g, 3, 6, "a")};
    const std::vector<double> one{0.3};
    CHECK(cv_select_C(tasks, Method::PLG, one, 3, settings, Metric::MSE) == 0.3);
    const std::vector<double> bad{-1.0};
    CHECK_THROWS_AS(cv_select_C(tasks, Method::PLG, bad, 3, settings, Metric::MSE), std::invalid_argument);
    std::vector<TaskDataset> tiny{oracle::regression_task(g, 3, 2, "b")};
    CHECK_THROWS_AS(cv_select_C(tiny, Method::PLG, one, 3, settings, Metric::MSE), DataError);
    CHECK_THROWS_AS(cv_select_C(tasks, Method::PLG, std::vector<double>{}, 3, settings, Metric::MSE),
                    std::invalid_argument);
  }
  SUBCASE("ties go to the smallest C") {
    std::vector<TaskDataset> tasks;
    for (int i = 0; i < 2; ++i) tasks.emplace_back("z" + std::to_string(i), g.gauss(3, 6), VectorXd::Zero(6), TaskKind::Regression);
    const std::vector<double> grid{10.0, 0.5, 2.0};
    CHECK(cv_select_C(tasks, Method::ARR, grid, 3, settings, Metric::MSE) == 0.5);
    CHECK(cv_select_C(tasks, Method::Independent, grid, 3, settings, Metric::MSE) == 0.5);
  }
  SUBCASE("matches a hand-rolled rotation over thirds") {
    for (int rep = 0; rep < 5; ++rep) {
      const std::vector<TaskDataset> tasks{oracle::regression_task(g, 3, 6, "a", 0.5),
                                           oracle::regression_task(g, 3, 6, "b", 0.5)};
      const std::vector<double> grid{0.01, 0.1, 1.0, 10.0, 100.0};
      auto part = [](const TaskDataset& t, int p) {
        const std::vector<Index> idx{2 * p, 2 * p + 1};
        return t.select(idx);
      };
      double best_arr = 0, best_arr_score = 1e300, best_ind = 0, best_ind_score = 1e300;
      for (double C : grid) {
        double arr_total = 0, ind_total = 0;
        for (int r = 0; r < 3; ++r) {
          VectorXd prior = VectorXd::Zero(3);
          for (const auto& t : tasks) prior += oracle::ridge_posterior(part(t, r), C, VectorXd::Zero(3)) / 2;
          for (const auto& t : tasks) {
            const TaskDataset tr = part(t, (r + 1) % 3), te = part(t, (r + 2) % 3);
            const VectorXd w = oracle::ridge_posterior(tr, C, prior);
            arr_total += (te.Y() - te.X().transpose() * w).squaredNorm() / 2;
          }
        }
        for (const auto& t : tasks)
          for (int f = 0; f < 3; ++f) {
            std::vector<Index> train;
            for (int q = 0; q < 3; ++q)
              if (q != f) train.insert(train.end(), {2 * q, 2 * q + 1});
            const VectorXd w = oracle::ridge_posterior(t.select(train), C, VectorXd::Zero(3));
            const TaskDataset te = part(t, f);
            ind_total += (te.Y() - te.X().transpose() * w).squaredNorm() / 2;
          }
        if (arr_total < best_arr_score) best_arr_score = arr_total, best_arr = C;
        if (ind_total < best_ind_score) best_ind_score = ind_total, best_ind = C;
      }
      CHECK(cv_select_C(tasks, Method::ARR, grid, 3, settings, Metric::MSE) == best_arr);
      CHECK(cv_select_C(tasks, Method::Independent, grid, 3, settings, Metric::MSE) == best_ind);
    }
  }
  SUBCASE("tasks smaller than the fold count are left out") {
    std::vector<TaskDataset> tasks{oracle::regression_task(g, 3, 9, "a"), oracle::regression_task(g, 3, 9, "b")};
    const std::vector<double> grid{0.01, 1.0, 100.0};
    const double without = cv_select_C(tasks, Method::PLG, grid, 3, settings, Metric::MSE);
    tasks.push_back(oracle::regression_task(g, 3, 2, "tiny"));
    CHECK(cv_select_C(tasks, Method::PLG, grid, 3, settings, Metric::MSE) == without);
  }
}

TEST_CASE("independent baseline ignores the observed tasks") {
  const TaskEnvironment env = prototype_env(72, 10);
  Protocol p = small_protocol(1);
  p.observed_fractions = {0.2, 0.6, 1.0};
  const auto reports = run_experiment(env, Method::Independent, p, {});
  REQUIRE(reports.size() == 3);
  for (const auto& r : reports) {
    CHECK(r.mean == reports[0].mean);
    CHECK(r.per_rep == reports[0].per_rep);
    CHECK(r.method == "Independent");
  }
  CHECK(reports[0].n_observed == 2);
  CHECK(reports[2].n_observed == 8);
}

TEST_CASE("reports are deterministic across runs and thread counts") {
  const TaskEnvironment env = prototype_env(73, 9);
  for (Method m : {Method::PLG, Method::ARR, Method::PLL, Method::Independent}) {
    Protocol p = small_protocol(5);
    p.threads = 1;
    const auto a = run_experiment(env, m, p, {});
    p.threads = 3;
    const auto b = run_experiment(env, m, p, {});
    const auto c = run_experiment(env, m, p, {});
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].per_rep == b[i].per_rep);
      CHECK(b[i].per_rep == c[i].per_rep);
      CHECK(a[i].mean == b[i].mean);
    }
  }
}

TEST_CASE("reports do not depend on the order tasks are listed in") {
  TaskEnvironment env = prototype_env(74, 8);
  const Protocol p = small_protocol(6);
  const auto a = run_experiment(env, Method::PLG, p, {});
  std::reverse(env.observed.begin(), env.observed.end());
  const auto b = run_experiment(env, Method::PLG, p, {});
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].per_rep == b[i].per_rep);
}

TEST_CASE("held-out tasks never reach prior learning") {
  const TaskEnvironment env = prototype_env(75, 10);
  Protocol p = small_protocol(7);
  p.repetitions = 4;
  std::map<int, std::vector<std::vector<std::string>>> seen;
  run_experiment(env, Method::PLG, p, {},
                 [&](int rep, Index n, std::span<const std::string> ids) {
                   CHECK(static_cast<Index>(ids.size()) == n);
                   seen[rep].emplace_back(ids.begin(), ids.end());
                 });
  REQUIRE(seen.size() == 4);
  for (const auto& [rep, lists] : seen) {
    REQUIRE(lists.size() == 2);
    const auto& largest = lists.back();
    const std::set<std::string> pool(largest.begin(), largest.end());
    CHECK(pool.size() == 8);  // 10 tasks minus 2 held out
    // Smaller fractions observe a prefix of the same pool.
    for (const auto& id : lists.front()) CHECK(pool.count(id) == 1);
  }
}

TEST_CASE("standard error is the sample deviation over root repetitions") {
  const TaskEnvironment env = prototype_env(76, 8);
  Protocol p = small_protocol(8);
  p.repetitions = 5;
  for (const auto& r : run_experiment(env, Method::ARR, p, {})) {
    const auto ms = oracle::mean_se(r.per_rep);
    CHECK(r.mean == doctest::Approx(ms.mean).epsilon(1e-14));
    CHECK(r.std_error == doctest::Approx(ms.se).epsilon(1e-12));
  }
}

TEST_CASE("transfer helps on prototype data") {
  const TaskEnvironment env = prototype_env(77, 40, 10, 20);
  Protocol p;
  p.seed = 9;
  p.repetitions = 8;
  p.n_holdout = 10;
  p.observed_fractions = {1.0};
  const auto plg = run_experiment(env, Method::PLG, p, {});
  const auto ind = run_experiment(env, Method::Independent, p, {});
  const double pooled = std::sqrt(plg[0].std_error * plg[0].std_error + ind[0].std_error * ind[0].std_error);
  CHECK(ind[0].mean - plg[0].mean > 2 * pooled);
}

TEST_CASE("classification runs report AUC and reject MSE") {
  SyntheticSpec s;
  s.seed = 78;
  s.kind = TaskKind::Classification;
  s.d = 4;
  s.n_tasks = 8;
  s.m_per_task = 30;
  const auto env = generate_synthetic(s).env;
  Protocol p = small_protocol(10);
  for (const auto& r : run_experiment(env, Method::PLG, p, {})) {
    CHECK(r.metric == Metric::AUC);
    CHECK(r.mean >= 0.0);
    CHECK(r.mean <= 1.0);
  }
  p.metric = Metric::MSE;
  CHECK_THROWS_AS(run_experiment(env, Method::PLG, p, {}), ConfigError);
  p.metric = Metric::ZeroOne;
  CHECK(run_experiment(env, Method::ARR, p, {}).front().metric == Metric::ZeroOne);
}

}  // TEST_SUITE
