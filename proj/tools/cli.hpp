#pragma once

#include <string>
#include <vector>

namespace cfx::cli {

/// Exit codes: 0 success, 1 validation error, 2 runtime failure.
enum ExitCode { kOk = 0, kValidation = 1, kRuntime = 2 };

/// Runs one subcommand; `args` excludes the program name.
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

}  // namespace cfx::cli
