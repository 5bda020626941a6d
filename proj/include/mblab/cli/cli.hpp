#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace mblab {

inline constexpr const char* kToolVersion = "mblab 1.0.0";

// Exit codes of the command-line tool.
enum ExitCode : int { exit_ok = 0, exit_usage = 2, exit_io = 3, exit_numeric = 4 };

// Runs one subcommand; `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mblab
