#include "pbll/baselines.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "pbll/errors.hpp"
#include "pbll/ridge.hpp"

namespace pbll {

VectorXd LinearPredictor::scores(const MatrixXd& X) const {
  if (X.rows() != w.size()) throw std::invalid_argument("feature dimension mismatch");
  return X.transpose() * w;
}

VectorXd LinearPredictor::predict(const MatrixXd& X) const {
  VectorXd s = scores(X);
  if (kind == TaskKind::Classification) s = s.unaryExpr([](double v) { return v >= 0.0 ? 1.0 : -1.0; });
  return s;
}

LinearPredictor fit_independent(const TaskDataset& task, double C) {
  return {fit_ridge_operator(task, C).b, task.kind()};
}

VectorXd arr_prior(std::span<const TaskDataset> observed, double C) {
  if (observed.empty()) throw std::invalid_argument("ARR needs at least one observed task");
  VectorXd sum = VectorXd::Zero(observed.front().dim());
  for (const auto& t : observed) {
    if (t.dim() != sum.size()) throw std::invalid_argument("dimension mismatch");
    sum += fit_ridge_operator(t, C).b;
  }
  return sum / static_cast<double>(observed.size());
}

LinearPredictor fit_arr(std::span<const TaskDataset> observed, const TaskDataset& task, double C) {
  const VectorXd prior = arr_prior(observed, C);
  return {posterior_mean(fit_ridge_operator(task, C), prior), task.kind()};
}

ExternalPredictions load_external_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  ExternalPredictions out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream row(line);
    std::string id, index_text, score_text;
    if (!std::getline(row, id, ',') || !std::getline(row, index_text, ',') || !std::getline(row, score_text))
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 3 columns");
    try {
      std::size_t used = 0;
      const long long index = std::stoll(index_text, &used);
      const double score = std::stod(score_text);
      if (index < 0) throw std::out_of_range("negative");
      if (!out[id].emplace(static_cast<Index>(index), score).second)
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": duplicate sample");
    } catch (const std::logic_error&) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed row");
    }
  }
  return out;
}

VectorXd external_scores(const ExternalPredictions& preds, const TaskDataset& task) {
  const auto it = preds.find(task.id());
  if (it == preds.end()) throw DataError("no external predictions for task '" + task.id() + "'");
  VectorXd s(task.size());
  for (Index j = 0; j < task.size(); ++j) {
    const auto hit = it->second.find(j);
    if (hit == it->second.end())
      throw DataError("task '" + task.id() + "': missing prediction for sample " + std::to_string(j));
    s(j) = hit->second;
  }
  return s;
}

}  // namespace pbll
