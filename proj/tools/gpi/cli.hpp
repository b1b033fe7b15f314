#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace gpi::cli {

/// Runs the command line `args` (args[0] is the program name) and returns
/// the process exit status. Errors are reported on `err` as
/// "error [kind]: message".
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gpi::cli
