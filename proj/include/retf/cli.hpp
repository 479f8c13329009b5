#ifndef RETF_CLI_HPP
#define RETF_CLI_HPP

#include <iosfwd>
#include <string>
#include <vector>

namespace retf {

/// Exit codes shared by every subcommand.
enum ExitCode : int {
  kExitOk = 0,
  kExitCheckFailed = 1,  // the command ran but its checked condition did not hold
  kExitUsage = 2,        // bad flags, unreadable or invalid input
};

/// Runs the command line `args` (without the program name).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace retf

#endif  // RETF_CLI_HPP
