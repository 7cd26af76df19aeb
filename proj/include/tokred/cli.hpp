#pragma once

#include <string>
#include <vector>

namespace tokred::cli {

// Dispatches a full command line (without the program name) and returns
// the process exit code: 0 success, 2 usage error, 3 data error. Errors
// are reported as one-line JSON on stderr.
int run(const std::vector<std::string>& args);

} // namespace tokred::cli
