#pragma once

// Command-line front end: generate, train, eval and gridsearch subcommands.

#include <ostream>
#include <string>
#include <vector>

namespace dklrom::cli {

inline constexpr const char* kVersion = "0.1.0";
/// Overrides the default output root ("runs") when set.
inline constexpr const char* kOutputRootEnv = "DKLROM_OUTPUT_ROOT";

/// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dklrom::cli
