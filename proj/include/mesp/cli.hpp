#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mesp {

// Runs one subcommand (gen-data, train, predict, eval, count, gradcheck).
// args excludes the program name. Returns the process exit status:
// 0 success, 1 runtime failure, 2 usage error, 3 gradient check failed.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mesp
