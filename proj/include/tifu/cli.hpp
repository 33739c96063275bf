#pragma once

#include <iostream>
#include <string>
#include <vector>

namespace tifu::cli {

// Runs one CLI invocation (args exclude argv[0]). Returns the process exit
// code: 0 success, 1 usage error, 2 I/O error, 3 numerical abort.
int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
        std::ostream& err = std::cerr);

}  // namespace tifu::cli
