#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace marginmt {

/// Entry point behind the `marginmt` executable. `args` excludes the program
/// name. Returns the process exit code: 0 success, 2 usage/schema/missing
/// file, 1 any other failure. Errors go to `err` as one JSON object.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace marginmt
