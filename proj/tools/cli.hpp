#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace busdensity::cli {

/// Runs one subcommand. Returns 0 on success, 1 on validation errors (bad
/// flags, schema mismatches, degenerate inputs) and 2 on runtime failures.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run(int argc, char** argv);

}  // namespace busdensity::cli
