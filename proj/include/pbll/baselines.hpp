#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pbll/task_model.hpp"

namespace pbll {

/// h(x) = <w, x> for regression, sign <w, x> for classification.
struct LinearPredictor {
  VectorXd w;
  TaskKind kind = TaskKind::Regression;

  /// Real-valued scores <w, x_j> for the columns of X.
  VectorXd scores(const MatrixXd& X) const;
  /// Labels: scores for regression, +-1 (ties to +1) for classification.
  VectorXd predict(const MatrixXd& X) const;
};

/// Ridge regression on the task alone (prior mean 0).
LinearPredictor fit_independent(const TaskDataset& task, double C);

/// Average of the independent ridge solutions of the observed tasks.
VectorXd arr_prior(std::span<const TaskDataset> observed, double C);

/// Adaptive ridge regression: ridge on `task` regularized toward arr_prior.
LinearPredictor fit_arr(std::span<const TaskDataset> observed, const TaskDataset& task, double C);

/// Scores produced by an external method, keyed by task id, indexed by sample.
using ExternalPredictions = std::map<std::string, std::map<Index, double>>;

/// Reads `task id, sample index, score` rows (no header).
ExternalPredictions load_external_predictions(const std::filesystem::path& path);

/// The score vector for one task; every sample index must be present.
VectorXd external_scores(const ExternalPredictions& preds, const TaskDataset& task);

}  // namespace pbll
