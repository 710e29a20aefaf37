#pragma once

#include <exception>
#include <ostream>
#include <string>
#include <vector>

namespace railkd {

/// Process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitNumeric = 4,
};

/// Maps a library exception to its exit code.
int exit_code_for(const std::exception& e);

/// Entry point for the `railkd` tool. `args` excludes the program name.
/// Never throws; errors are reported on `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace railkd
