#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mammoforge::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitProcessing = 3;

/// Parses `args` (without the program name) and runs one subcommand. Errors
/// print a single JSON line on `err` and map to the exit codes above.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run_cli(int argc, char** argv);

}  // namespace mammoforge::cli
