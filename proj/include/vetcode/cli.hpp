#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace vetcode::cli {

// Runs one invocation; args excludes the program name. Returns the process
// exit status. Failures print a single "error: <kind>: <message>" line to err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vetcode::cli
