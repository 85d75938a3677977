#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace posesparse::cli {

// Runs the command line `args` (program name excluded). Returns the process
// exit code: 0 on success, 1 for usage errors, otherwise the ErrorCode of the
// failure. Diagnostics go to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace posesparse::cli
