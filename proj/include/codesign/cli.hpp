#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace codesign {

/// Stable process exit codes.
enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 2,  // config, schema or usage error
    kExitNoFeasible = 3,
    kExitOracle = 4,
    kExitExportInfeasible = 5,
    kExitInternal = 1,
};

/// Entry point of the `codesign` tool; argv[0] is the program name.
int run_cli(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

} // namespace codesign
