#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace pbll {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class TaskKind { Classification, Regression };

std::string to_string(TaskKind kind);
TaskKind parse_task_kind(const std::string& text);

/// One learning task: a d x m design matrix whose columns are samples, and m
/// labels. Classification labels are exactly +-1.
///
/// Immutable after construction. The Gram matrix X X^T and the moment vector
/// X Y are computed once here, since the ridge learner, the bound terms and
/// both optimizers all reuse them.
class TaskDataset {
 public:
  TaskDataset(std::string id, MatrixXd X, VectorXd Y, TaskKind kind);

  const std::string& id() const { return id_; }
  const MatrixXd& X() const { return X_; }
  const VectorXd& Y() const { return Y_; }
  TaskKind kind() const { return kind_; }
  Index dim() const { return X_.rows(); }
  Index size() const { return X_.cols(); }

  const MatrixXd& gram() const { return gram_; }
  const VectorXd& moment() const { return moment_; }

  /// New task made of the given sample columns, in the given order.
  TaskDataset select(std::span<const Index> columns) const;
  TaskDataset with_labels(VectorXd Y) const;

 private:
  std::string id_;
  MatrixXd X_;
  VectorXd Y_;
  TaskKind kind_;
  MatrixXd gram_;
  VectorXd moment_;
};

struct TaskEnvironment {
  std::vector<TaskDataset> observed;
  std::vector<TaskDataset> heldout;
  // Factor the regression labels were divided by at ingestion; 1 otherwise.
  double label_scale = 1.0;

  Index dim() const;
  TaskKind kind() const;
  std::vector<TaskDataset> all_tasks() const;
  // Shared d and kind, disjoint ids, positive scale. Throws DataError.
  void validate() const;
};

/// Hyperprior variance scale, confidence level and ridge regularization.
struct BoundConfig {
  double sigma = 1.0;
  double delta = 0.05;
  double C = 1.0;

  void validate() const;
};

enum class SyntheticMode { SharedPrototype, SharedSubspace };

std::string to_string(SyntheticMode mode);
SyntheticMode parse_synthetic_mode(const std::string& text);

struct SyntheticSpec {
  Index d = 10;
  Index k = 2;
  Index n_tasks = 10;
  Index m_per_task = 20;
  double noise_std = 0.1;
  SyntheticMode mode = SyntheticMode::SharedPrototype;
  std::uint64_t seed = 0;
  TaskKind kind = TaskKind::Regression;
  // Extra tasks drawn from the same environment, placed in `heldout`.
  Index n_heldout = 0;
  // Variance of the per-task deviation from the prototype.
  double perturbation_var = 0.1;
  // Classification only: probability of flipping each label.
  double label_flip = 0.05;

  void validate() const;
};

struct SyntheticEnvironment {
  TaskEnvironment env;
  // d x 1 prototype (SharedPrototype) or d x k orthonormal basis (SharedSubspace).
  MatrixXd truth;
  // Generating weight vector of every task, observed first, then held-out.
  std::vector<VectorXd> task_weights;
};

/// Draws a task environment that satisfies either the shared-prototype or the
/// shared-subspace assumption. Every task uses its own random substream, so the
/// output is a pure function of the spec.
SyntheticEnvironment generate_synthetic(const SyntheticSpec& spec);

/// Reads every `*.csv` file of `directory` (sorted by name) as one task: no
/// header, last column is the label. Regression labels are divided by their
/// largest magnitude over observed tasks; classification labels in {0,1} are
/// mapped to {-1,+1}. Tasks whose id (file stem) is in `heldout_ids` go to
/// `heldout` and are scaled with the observed-task constant.
TaskEnvironment load_tasks_csv(const std::filesystem::path& directory, TaskKind kind, bool bias,
                               std::span<const std::string> heldout_ids = {});

/// Environment manifest: JSON object with `directory` (relative to the
/// manifest), `kind`, `bias` and optional `holdout` id list.
TaskEnvironment load_environment_manifest(const std::filesystem::path& manifest);

/// One task as a CSV file, using the shortest round-trip float formatting.
/// read_task_csv maps {0,1} classification labels but leaves regression
/// labels unscaled.
void write_task_csv(const TaskDataset& task, const std::filesystem::path& path);
TaskDataset read_task_csv(const std::filesystem::path& path, TaskKind kind, bool bias);

std::vector<Index> sample_sizes(std::span<const TaskDataset> tasks);

}  // namespace pbll
