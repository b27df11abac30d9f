#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <variant>

#include "json.hpp"

#include "pbll/bound.hpp"
#include "pbll/harness.hpp"
#include "pbll/plg.hpp"
#include "pbll/pll.hpp"

namespace pbll {

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

nlohmann::json to_json(const BoundReport& r);
nlohmann::json to_json(const MetricReport& r);
nlohmann::json to_json(const GaussianHyperposterior& h);
/// {"type": "stiefel", "d", "k", "data": row-major entries}
nlohmann::json to_json(const StiefelPoint& M);

using Hyperposterior = std::variant<GaussianHyperposterior, StiefelPoint>;

Hyperposterior hyperposterior_from_json(const nlohmann::json& j);
Hyperposterior read_hyperposterior(const std::filesystem::path& path);
void write_hyperposterior(const Hyperposterior& h, const std::filesystem::path& path);

/// Plot-ready summary: header `method,n_observed,metric,mean,stderr`, one row per report.
std::string summary_csv(std::span<const MetricReport> reports);

}  // namespace pbll
