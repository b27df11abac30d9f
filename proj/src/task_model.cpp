#include "pbll/task_model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "pbll/errors.hpp"
#include "pbll/random.hpp"

namespace pbll {

namespace fs = std::filesystem;

std::string to_string(TaskKind kind) {
  return kind == TaskKind::Classification ? "classification" : "regression";
}

TaskKind parse_task_kind(const std::string& text) {
  if (text == "classification") return TaskKind::Classification;
  if (text == "regression") return TaskKind::Regression;
  throw ConfigError("unknown task kind '" + text + "'");
}

std::string to_string(SyntheticMode mode) {
  return mode == SyntheticMode::SharedPrototype ? "shared_prototype" : "shared_subspace";
}

SyntheticMode parse_synthetic_mode(const std::string& text) {
  if (text == "shared_prototype") return SyntheticMode::SharedPrototype;
  if (text == "shared_subspace") return SyntheticMode::SharedSubspace;
  throw ConfigError("unknown synthetic mode '" + text + "'");
}

TaskDataset::TaskDataset(std::string id, MatrixXd X, VectorXd Y, TaskKind kind)
    : id_(std::move(id)), X_(std::move(X)), Y_(std::move(Y)), kind_(kind) {
  if (X_.rows() < 1 || X_.cols() < 1)
    throw DataError("task '" + id_ + "': empty design matrix");
  if (X_.cols() != Y_.size())
    throw DataError("task '" + id_ + "': " + std::to_string(X_.cols()) + " samples but " +
                    std::to_string(Y_.size()) + " labels");
  if (!X_.allFinite() || !Y_.allFinite())
    throw DataError("task '" + id_ + "': non-finite value");
  if (kind_ == TaskKind::Classification) {
    for (Index j = 0; j < Y_.size(); ++j)
      if (Y_(j) != 1.0 && Y_(j) != -1.0)
        throw DataError("task '" + id_ + "': classification label is not +-1");
  }
  gram_ = X_ * X_.transpose();
  moment_ = X_ * Y_;
}

TaskDataset TaskDataset::select(std::span<const Index> columns) const {
  MatrixXd X(dim(), static_cast<Index>(columns.size()));
  VectorXd Y(static_cast<Index>(columns.size()));
  for (std::size_t j = 0; j < columns.size(); ++j) {
    X.col(static_cast<Index>(j)) = X_.col(columns[j]);
    Y(static_cast<Index>(j)) = Y_(columns[j]);
  }
  return TaskDataset(id_, std::move(X), std::move(Y), kind_);
}

TaskDataset TaskDataset::with_labels(VectorXd Y) const {
  return TaskDataset(id_, X_, std::move(Y), kind_);
}

Index TaskEnvironment::dim() const {
  if (!observed.empty()) return observed.front().dim();
  if (!heldout.empty()) return heldout.front().dim();
  throw DataError("environment has no tasks");
}

TaskKind TaskEnvironment::kind() const {
  if (!observed.empty()) return observed.front().kind();
  if (!heldout.empty()) return heldout.front().kind();
  throw DataError("environment has no tasks");
}

std::vector<TaskDataset> TaskEnvironment::all_tasks() const {
  std::vector<TaskDataset> all = observed;
  all.insert(all.end(), heldout.begin(), heldout.end());
  return all;
}

void TaskEnvironment::validate() const {
  if (!(label_scale > 0.0) || !std::isfinite(label_scale))
    throw DataError("label scale must be positive");
  const Index d = dim();
  const TaskKind k = kind();
  std::set<std::string> ids;
  for (const auto* group : {&observed, &heldout}) {
    for (const auto& t : *group) {
      if (t.dim() != d)
        throw DataError("task '" + t.id() + "' has " + std::to_string(t.dim()) +
                        " features, expected " + std::to_string(d));
      if (t.kind() != k) throw DataError("task '" + t.id() + "' has a different task kind");
      if (!ids.insert(t.id()).second) throw DataError("duplicate task id '" + t.id() + "'");
    }
  }
}

void BoundConfig::validate() const {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("sigma must be positive");
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
  if (!(C > 0.0) || !std::isfinite(C)) throw ConfigError("C must be positive");
}

void SyntheticSpec::validate() const {
  if (d < 1 || n_tasks < 1 || m_per_task < 1 || n_heldout < 0)
    throw ConfigError("synthetic spec: d, n_tasks, m_per_task must be positive");
  if (mode == SyntheticMode::SharedSubspace && (k < 1 || k > d))
    throw ConfigError("synthetic spec: need 1 <= k <= d");
  if (!(noise_std >= 0.0) || !(perturbation_var >= 0.0))
    throw ConfigError("synthetic spec: noise must be nonnegative");
  if (!(label_flip >= 0.0 && label_flip <= 1.0))
    throw ConfigError("synthetic spec: label_flip must lie in [0, 1]");
}

namespace {

// Stream ids: 0 is the environment-level draw, 1 + t is task t.
constexpr std::uint64_t kEnvironmentStream = 0;

MatrixXd orthonormal_basis(Rng& rng, Index d, Index k) {
  Eigen::HouseholderQR<MatrixXd> qr(gaussian_matrix(rng, d, k));
  MatrixXd Q = qr.householderQ() * MatrixXd::Identity(d, k);
  const MatrixXd& R = qr.matrixQR();
  for (Index j = 0; j < k; ++j)
    if (R(j, j) < 0.0) Q.col(j) = -Q.col(j);
  return Q;
}

std::string task_name(const char* prefix, Index i) {
  std::ostringstream os;
  os << prefix << '_';
  os.width(4);
  os.fill('0');
  os << i;
  return os.str();
}

}  // namespace

SyntheticEnvironment generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng env_rng = make_stream(spec.seed, kEnvironmentStream);

  SyntheticEnvironment out;
  if (spec.mode == SyntheticMode::SharedPrototype)
    out.truth = gaussian_matrix(env_rng, spec.d, 1);
  else
    out.truth = orthonormal_basis(env_rng, spec.d, spec.k);

  const Index total = spec.n_tasks + spec.n_heldout;
  out.task_weights.reserve(static_cast<std::size_t>(total));
  for (Index t = 0; t < total; ++t) {
    Rng rng = make_stream(spec.seed, 1 + static_cast<std::uint64_t>(t));
    VectorXd w;
    if (spec.mode == SyntheticMode::SharedPrototype) {
      w = out.truth.col(0) + gaussian_vector(rng, spec.d, std::sqrt(spec.perturbation_var));
    } else {
      w = out.truth * gaussian_vector(rng, spec.k);
    }
    MatrixXd X = gaussian_matrix(rng, spec.d, spec.m_per_task);
    VectorXd Y = X.transpose() * w;
    if (spec.kind == TaskKind::Regression) {
      Y += gaussian_vector(rng, spec.m_per_task, spec.noise_std);
    } else {
      std::bernoulli_distribution flip(spec.label_flip);
      for (Index j = 0; j < Y.size(); ++j) {
        double label = Y(j) >= 0.0 ? 1.0 : -1.0;
        if (flip(rng)) label = -label;
        Y(j) = label;
      }
    }
    const bool held = t >= spec.n_tasks;
    TaskDataset task(held ? task_name("heldout", t - spec.n_tasks) : task_name("task", t),
                     std::move(X), std::move(Y), spec.kind);
    (held ? out.env.heldout : out.env.observed).push_back(std::move(task));
    out.task_weights.push_back(std::move(w));
  }
  out.env.validate();
  return out;
}

namespace {

double parse_double(std::string_view field, const fs::path& path, std::size_t line) {
  while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
  while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r'))
    field.remove_suffix(1);
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size())
    throw DataError(path.string() + ":" + std::to_string(line) + ": cannot parse '" +
                    std::string(field) + "'");
  if (!std::isfinite(value))
    throw DataError(path.string() + ":" + std::to_string(line) + ": non-finite value");
  return value;
}

struct RawTask {
  std::vector<std::vector<double>> rows;
};

RawTask read_rows(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  RawTask raw;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> row;
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      row.push_back(parse_double(rest.substr(0, comma), path, line_no));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (row.size() < 2)
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": need at least one feature and a label");
    if (!raw.rows.empty() && row.size() != raw.rows.front().size())
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": ragged row");
    raw.rows.push_back(std::move(row));
  }
  if (raw.rows.empty()) throw DataError(path.string() + ": empty task file");
  return raw;
}

}  // namespace

TaskDataset read_task_csv(const fs::path& path, TaskKind kind, bool bias) {
  const RawTask raw = read_rows(path);
  const Index features = static_cast<Index>(raw.rows.front().size()) - 1;
  const Index d = features + (bias ? 1 : 0);
  const Index m = static_cast<Index>(raw.rows.size());
  MatrixXd X(d, m);
  VectorXd Y(m);
  for (Index j = 0; j < m; ++j) {
    const auto& row = raw.rows[static_cast<std::size_t>(j)];
    for (Index i = 0; i < features; ++i) X(i, j) = row[static_cast<std::size_t>(i)];
    if (bias) X(features, j) = 1.0;
    Y(j) = row.back();
  }
  if (kind == TaskKind::Classification) {
    const bool zero_one = (Y.array() == 0.0 || Y.array() == 1.0).all();
    const bool signed_labels = (Y.array() == -1.0 || Y.array() == 1.0).all();
    if (!zero_one && !signed_labels)
      throw DataError(path.string() + ": classification labels must be in {0,1} or {-1,+1}");
    if (zero_one && !signed_labels) Y = (2.0 * Y.array() - 1.0).matrix();
  }
  return TaskDataset(path.stem().string(), std::move(X), std::move(Y), kind);
}

TaskEnvironment load_tasks_csv(const fs::path& directory, TaskKind kind, bool bias,
                               std::span<const std::string> heldout_ids) {
  if (!fs::is_directory(directory)) throw DataError("not a directory: " + directory.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(directory))
    if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no task CSV files in " + directory.string());

  const std::set<std::string> held(heldout_ids.begin(), heldout_ids.end());
  TaskEnvironment env;
  for (const auto& f : files) {
    TaskDataset task = read_task_csv(f, kind, bias);
    (held.count(task.id()) ? env.heldout : env.observed).push_back(std::move(task));
  }
  if (env.heldout.size() != held.size()) throw DataError("holdout list names a missing task");
  if (env.observed.empty()) throw DataError("every task is held out");

  if (kind == TaskKind::Regression) {
    double scale = 0.0;
    for (const auto& t : env.observed) scale = std::max(scale, t.Y().cwiseAbs().maxCoeff());
    if (!(scale > 0.0)) throw DataError("regression labels are all zero");
    env.label_scale = scale;
    for (auto* group : {&env.observed, &env.heldout})
      for (auto& t : *group) t = t.with_labels(t.Y() / scale);
  }
  env.validate();
  return env;
}

TaskEnvironment load_environment_manifest(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw DataError("cannot open manifest " + manifest.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest " + manifest.string() + ": " + e.what());
  }
  try {
    fs::path dir = j.at("directory").get<std::string>();
    if (dir.is_relative()) dir = manifest.parent_path() / dir;
    const TaskKind kind = parse_task_kind(j.at("kind").get<std::string>());
    const bool bias = j.value("bias", false);
    const auto holdout = j.value("holdout", std::vector<std::string>{});
    return load_tasks_csv(dir, kind, bias, holdout);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest " + manifest.string() + ": " + e.what());
  }
}

void write_task_csv(const TaskDataset& task, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  char buf[64];
  auto put = [&](double v) {
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    out.write(buf, ptr - buf);
  };
  for (Index j = 0; j < task.size(); ++j) {
    for (Index i = 0; i < task.dim(); ++i) {
      put(task.X()(i, j));
      out.put(',');
    }
    put(task.Y()(j));
    out.put('\n');
  }
}

std::vector<Index> sample_sizes(std::span<const TaskDataset> tasks) {
  std::vector<Index> sizes;
  sizes.reserve(tasks.size());
  for (const auto& t : tasks) sizes.push_back(t.size());
  return sizes;
}

}  // namespace pbll
