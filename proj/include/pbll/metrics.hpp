#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace pbll {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Metric { AUC, ZeroOne, MSE };

std::string to_string(Metric m);
Metric parse_metric(const std::string& text);
bool higher_is_better(Metric m);

/// Area under the ROC curve as the Mann-Whitney statistic, ties counted 1/2.
/// Labels are +-1; throws std::invalid_argument if only one class is present.
double auc(const VectorXd& scores, const VectorXd& labels);

/// Fraction of mismatches between +-1 predictions and labels.
double zero_one(const VectorXd& predictions, const VectorXd& labels);

/// Mean squared error after undoing a label scaling: mean((p - t)^2) * scale^2.
double mse(const VectorXd& predictions, const VectorXd& targets, double scale = 1.0);

/// Metric of real-valued scores against labels; nullopt where undefined
/// (AUC on a single-class sample).
std::optional<double> score_metric(Metric metric, const VectorXd& scores, const VectorXd& labels,
                                   double scale);

/// Principal angles between span(M) and span(B), ascending, in [0, pi/2].
std::vector<double> principal_angles(const MatrixXd& M, const MatrixXd& B);

}  // namespace pbll
