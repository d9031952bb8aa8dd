// Command-line surface. run_cli is the whole program (the binary's main just
// forwards), which keeps commands testable in-process.
//
// Exit codes: 0 success, 2 config error, 3 artifact mismatch, 4 numerical
// failure.
#pragma once

#include <string>
#include <vector>

namespace avword {

int run_cli(const std::vector<std::string>& args);

}  // namespace avword
