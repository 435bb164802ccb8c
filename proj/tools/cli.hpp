#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cardiosynth::cli {

/// Runs one command line (without the program name). Returns the process exit
/// code: 0 success, 1 runtime failure, 2 usage error. Failures are reported
/// as one `error: ...` line on `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cardiosynth::cli
