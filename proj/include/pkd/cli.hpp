#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pkd {

// Process exit codes.
enum ExitCode : int {
    kExitOk = 0,
    kExitCheckFailed = 1,
    kExitBadInput = 2,
    kExitIo = 3,
    kExitDiverged = 4,
};

// Entry point of the pkd binary; args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace pkd
