#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace stalt::cli {

// Exit codes: 0 success, 1 domain failure, 2 usage error.
constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
// Convenience for in-process callers; args exclude the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace stalt::cli
