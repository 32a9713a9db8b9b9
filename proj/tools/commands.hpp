#pragma once

#include <iosfwd>

#include "run_config.hpp"

namespace harmon::cli {

// Each returns a process exit code. harmon::Error propagates to run_cli.
int cmd_simulate(const RunConfig& config, std::ostream& out);
int cmd_harmonize(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_evaluate(const RunConfig& config, std::ostream& out);
int cmd_report(const RunConfig& config, std::ostream& out, std::ostream& err);

}  // namespace harmon::cli
