// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace wmoe::cli {

// Entry point behind the wmoe binary; exposed so tests can drive commands
// in-process. Exit codes: 0 success, 2 usage/config/data error, 3 numeric
// failure.
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

}  // namespace wmoe::cli
