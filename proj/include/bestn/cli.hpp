#pragma once

#include <iosfwd>

namespace bestn {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomain = 1;
inline constexpr int kExitUsage = 2;

// Entry point of the `bestn` tool. Progress and errors go to `err`, command
// results (reports, selections) to `out`. Returns the process exit status.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace bestn
