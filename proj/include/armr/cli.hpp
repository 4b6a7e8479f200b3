#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace armr {

/// Exit codes of the command-line tool.
enum ExitCode : int {
    kExitOk = 0,
    kExitInvalid = 2,
    kExitIo = 3,
    kExitNumeric = 4,
};

/// Runs `regime-select <command> ...`; args excludes the program name.
/// Commands: simulate, fit, select, verify-bound, mc-study.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace armr
