#pragma once

#include <iosfwd>

namespace shapesos::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kAuditFailed = 1;
inline constexpr int kValidation = 2;
inline constexpr int kSolver = 3;
inline constexpr int kOther = 4;

// argv[0] is the program name.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace shapesos::cli
