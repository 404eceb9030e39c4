#pragma once

#include <string>
#include <vector>

namespace nlreg {

/// Entry point of the `nlreg` command. `args` excludes the program name.
/// Returns the process exit status: 0 on success, 2 for usage errors, 1 for
/// everything else.
int run_cli(const std::vector<std::string>& args);

}  // namespace nlreg
