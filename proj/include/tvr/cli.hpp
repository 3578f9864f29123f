#pragma once

#include <string>
#include <vector>

namespace tvr {

// Command-line front door; returns the process exit code (0 success, 1
// runtime failure, 2 usage error).
int cli_dispatch(const std::vector<std::string>& args);

}  // namespace tvr
