// SPDX-License-Identifier: Apache-2.0
#include "wmoe/cli.hpp"

int main(int argc, char** argv) { return wmoe::cli::run(argc, argv); }
