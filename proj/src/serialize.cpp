#include "pbll/serialize.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "pbll/errors.hpp"

namespace pbll {

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

nlohmann::json to_json(const BoundReport& r) {
  return {
      {"empirical_risk", r.empirical_risk},
      {"env_kl_term", r.env_kl_term},
      {"task_kl_term", r.task_kl_term},
      {"delta_const", r.delta_const},
      {"total", r.total},
      {"deterministic_risk_bound", r.deterministic_risk_bound()},
      {"n", r.n},
      {"m_bar", r.m_bar},
      {"env_coefficient", r.env_coefficient},
      {"task_coefficient", r.task_coefficient},
      {"env_confidence_const", r.env_confidence_const},
      {"task_confidence_const", r.task_confidence_const},
      {"env_kl_const", r.env_kl_const},
      {"task_kl_const", r.task_kl_const},
      {"env_kl_symbolic", r.env_kl_symbolic},
  };
}

nlohmann::json to_json(const MetricReport& r) {
  return {{"method", r.method},       {"n_observed", r.n_observed}, {"metric", to_string(r.metric)},
          {"mean", r.mean},           {"std_error", r.std_error},   {"per_rep", r.per_rep}};
}

nlohmann::json to_json(const GaussianHyperposterior& h) {
  return {{"type", "gaussian"},
          {"sigma", h.sigma},
          {"provenance", to_string(h.provenance)},
          {"mean", std::vector<double>(h.mean.data(), h.mean.data() + h.mean.size())}};
}

nlohmann::json to_json(const StiefelPoint& M) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(M.rows() * M.cols()));
  for (Index i = 0; i < M.rows(); ++i)
    for (Index j = 0; j < M.cols(); ++j) data.push_back(M.matrix()(i, j));
  return {{"type", "stiefel"}, {"d", M.rows()}, {"k", M.cols()}, {"data", data}};
}

Hyperposterior hyperposterior_from_json(const nlohmann::json& j) {
  try {
    const std::string type = j.at("type").get<std::string>();
    if (type == "gaussian") {
      const auto mean = j.at("mean").get<std::vector<double>>();
      GaussianHyperposterior h;
      h.mean = Eigen::Map<const VectorXd>(mean.data(), static_cast<Index>(mean.size()));
      h.sigma = j.value("sigma", 1.0);
      h.provenance = j.value("provenance", std::string("closed_form")) == "conjugate_gradient"
                         ? Provenance::ConjugateGradient
                         : Provenance::ClosedForm;
      if (!h.mean.allFinite()) throw DataError("hyperposterior mean is not finite");
      return h;
    }
    if (type == "stiefel") {
      const auto d = j.at("d").get<Index>();
      const auto k = j.at("k").get<Index>();
      const auto data = j.at("data").get<std::vector<double>>();
      if (d < 1 || k < 1 || static_cast<Index>(data.size()) != d * k)
        throw DataError("stiefel point: data size does not match d x k");
      MatrixXd M(d, k);
      for (Index i = 0; i < d; ++i)
        for (Index c = 0; c < k; ++c) M(i, c) = data[static_cast<std::size_t>(i * k + c)];
      try {
        return StiefelPoint(std::move(M));
      } catch (const std::invalid_argument& e) {
        throw DataError(std::string("stiefel point: ") + e.what());
      }
    }
    throw DataError("unknown hyperposterior type '" + type + "'");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed hyperposterior: ") + e.what());
  }
}

Hyperposterior read_hyperposterior(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return hyperposterior_from_json(j);
}

void write_hyperposterior(const Hyperposterior& h, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  std::visit([&](const auto& v) { out << to_json(v).dump(2) << '\n'; }, h);
}

std::string summary_csv(std::span<const MetricReport> reports) {
  std::ostringstream os;
  os << "method,n_observed,metric,mean,stderr\n";
  for (const auto& r : reports)
    os << r.method << ',' << r.n_observed << ',' << to_string(r.metric) << ',' << format_double(r.mean) << ','
       << format_double(r.std_error) << '\n';
  return os.str();
}

}  // namespace pbll
