#pragma once

#include <string>
#include <vector>

namespace bidlab::cli {

// Entry point of the bidctl binary. Exit codes: 0 success, 2 config error,
// 3 runtime abort.
int run(int argc, const char* const* argv);

// Test-friendly overload; args exclude the program name.
int run(const std::vector<std::string>& args);

}  // namespace bidlab::cli
