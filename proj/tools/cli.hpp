#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace pbll::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumerical = 3;

std::string version();

/// Runs one CLI invocation; `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pbll::cli
