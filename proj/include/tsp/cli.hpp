#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tsp::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUserError = 2;
inline constexpr int kExitNumericError = 3;

// Parses `args` (args[0] is the program name) and runs one subcommand:
// gen-data, train, eval or trace. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tsp::cli
