#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace smartcal::cli {

/// Runs one smartcal command line. Returns the process exit code:
/// 0 success, 2 usage error, 3 data error, 4 numeric failure.
int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

} // namespace smartcal::cli
