#include "pbll/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "pbll/errors.hpp"
#include "pbll/ridge.hpp"

namespace pbll {

std::string to_string(Metric m) {
  switch (m) {
    case Metric::AUC: return "AUC";
    case Metric::ZeroOne: return "ZeroOne";
    case Metric::MSE: return "MSE";
  }
  return "?";
}

Metric parse_metric(const std::string& text) {
  if (text == "AUC" || text == "auc") return Metric::AUC;
  if (text == "ZeroOne" || text == "zero_one") return Metric::ZeroOne;
  if (text == "MSE" || text == "mse") return Metric::MSE;
  throw ConfigError("unknown metric '" + text + "'");
}

bool higher_is_better(Metric m) { return m == Metric::AUC; }

double auc(const VectorXd& scores, const VectorXd& labels) {
  if (scores.size() != labels.size() || scores.size() == 0)
    throw std::invalid_argument("auc: scores and labels must be nonempty and equal length");
  const Eigen::Index n = scores.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores(a) < scores(b); });

  // Midranks handle ties, which is exactly half credit per tied pair.
  double positive_rank_sum = 0.0;
  double positives = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores(order[j]) == scores(order[i])) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      const double y = labels(order[t]);
      if (y != 1.0 && y != -1.0) throw std::invalid_argument("auc: labels must be +-1");
      if (y == 1.0) {
        positive_rank_sum += midrank;
        positives += 1.0;
      }
    }
    i = j;
  }
  const double negatives = static_cast<double>(n) - positives;
  if (positives == 0.0 || negatives == 0.0) throw std::invalid_argument("auc: both classes required");
  return (positive_rank_sum - positives * (positives + 1.0) / 2.0) / (positives * negatives);
}

double zero_one(const VectorXd& predictions, const VectorXd& labels) {
  if (predictions.size() != labels.size() || predictions.size() == 0)
    throw std::invalid_argument("zero_one: inputs must be nonempty and equal length");
  Eigen::Index wrong = 0;
  for (Eigen::Index j = 0; j < labels.size(); ++j)
    if (predictions(j) != labels(j)) ++wrong;
  return static_cast<double>(wrong) / static_cast<double>(labels.size());
}

double mse(const VectorXd& predictions, const VectorXd& targets, double scale) {
  if (predictions.size() != targets.size() || predictions.size() == 0)
    throw std::invalid_argument("mse: inputs must be nonempty and equal length");
  return (predictions - targets).squaredNorm() / static_cast<double>(targets.size()) * scale * scale;
}

std::optional<double> score_metric(Metric metric, const VectorXd& scores, const VectorXd& labels,
                                   double scale) {
  switch (metric) {
    case Metric::AUC: {
      const bool has_pos = (labels.array() == 1.0).any();
      const bool has_neg = (labels.array() == -1.0).any();
      if (!has_pos || !has_neg) return std::nullopt;
      return auc(scores, labels);
    }
    case Metric::ZeroOne:
      return zero_one(scores.unaryExpr([](double v) { return v >= 0.0 ? 1.0 : -1.0; }), labels);
    case Metric::MSE:
      return mse(scores, labels, scale);
  }
  return std::nullopt;
}

std::vector<double> principal_angles(const MatrixXd& M, const MatrixXd& B) {
  if (M.rows() != B.rows()) throw std::invalid_argument("principal_angles: ambient dimensions differ");
  if (orthonormality_error(M) > 1e-8 || orthonormality_error(B) > 1e-8)
    throw std::invalid_argument("principal_angles: inputs must have orthonormal columns");
  Eigen::JacobiSVD<MatrixXd> svd(M.transpose() * B);
  std::vector<double> angles;
  const auto& s = svd.singularValues();  // descending
  for (Eigen::Index i = 0; i < s.size(); ++i) angles.push_back(std::acos(std::clamp(s(i), 0.0, 1.0)));
  std::sort(angles.begin(), angles.end());
  return angles;
}

}  // namespace pbll
