#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pbll/baselines.hpp"
#include "pbll/metrics.hpp"
#include "pbll/plg.hpp"
#include "pbll/pll.hpp"
#include "pbll/task_model.hpp"

namespace pbll {

enum class Method { PLG, PLL, ARR, Independent };

std::string to_string(Method m);
Method parse_method(const std::string& text);

/// Everything a transfer learner needs besides the data and C.
struct LearnerSettings {
  BoundConfig bound;  // bound.C is ignored; C comes from model selection
  Index subspace_dim = 2;
  InitStrategy init = InitStrategy::SvdOfRidgeSolutions;
  std::uint64_t init_seed = 0;
  CgConfig cg;
  CurvilinearConfig curvilinear;
};

std::vector<double> default_c_grid();

struct Protocol {
  Index n_holdout = 1;
  int repetitions = 100;
  std::vector<double> observed_fractions{0.2, 0.4, 0.6, 0.8, 1.0};
  std::vector<double> c_grid = default_c_grid();
  int folds = 3;
  std::uint64_t seed = 0;
  // Share of each held-out task's samples used for training.
  double heldout_train_fraction = 0.5;
  // Unset: AUC for classification, MSE for regression.
  std::optional<Metric> metric;
  unsigned threads = 1;

  void validate(Index total_tasks) const;
  Metric resolved_metric(TaskKind kind) const;
  /// Number of observed tasks for every fraction, given the non-held-out pool.
  std::vector<Index> observed_counts(Index pool_size) const;
};

struct MetricReport {
  std::string method;
  Index n_observed = 0;
  Metric metric = Metric::MSE;
  double mean = 0.0;
  double std_error = 0.0;  // sample std / sqrt(#repetitions)
  std::vector<double> per_rep;
};

/// What a transfer method carries from observed tasks to a new one.
struct TransferModel {
  Method method = Method::Independent;
  VectorXd prior_mean;                  // PLG, ARR
  std::optional<StiefelPoint> subspace;  // PLL
};

TransferModel learn_transfer(Method method, std::span<const TaskDataset> observed, double C,
                             const LearnerSettings& settings);

/// Trains the within-task learner on `train` using the transferred knowledge;
/// the result is always an ambient-space linear predictor.
LinearPredictor adapt_to_task(const TransferModel& model, const TaskDataset& train, double C);

/// Chooses C from `grid` by cross-validation on `tasks`.
///
/// Transfer methods split every task's samples into `folds` consecutive parts
/// and rotate over them: part r of all tasks jointly learns the prior, part
/// r+1 trains per-task predictors, part r+2 is scored. Independent uses
/// ordinary k-fold CV per task. Tasks with fewer than `folds` samples are
/// skipped. Ties go to the smaller C.
double cv_select_C(std::span<const TaskDataset> tasks, Method method, std::span<const double> grid,
                   int folds, const LearnerSettings& settings, Metric metric);

/// Called once per learned transfer model with the ids of the tasks it saw.
using TrainingObserver =
    std::function<void(int repetition, Index n_observed, std::span<const std::string> task_ids)>;

/// Repeated hold-out evaluation. Per repetition: a random set of n_holdout
/// tasks is set aside; for each observed fraction the first tasks of the
/// remaining pool are observed, C is selected on them, the transfer model is
/// learned, and every held-out task is trained on its training split and
/// scored on its test split. Results depend only on the protocol seed.
std::vector<MetricReport> run_experiment(const TaskEnvironment& env, Method method,
                                         const Protocol& protocol, const LearnerSettings& settings,
                                         const TrainingObserver& observer = {});

}  // namespace pbll
