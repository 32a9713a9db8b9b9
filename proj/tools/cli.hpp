#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace harmon::cli {

/// Entry point shared by the harmon binary and the tests. `args` excludes the
/// program name. Exit codes: 0 success, 1 invalid input or configuration,
/// 2 file-system failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace harmon::cli
