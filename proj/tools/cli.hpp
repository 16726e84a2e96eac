#pragma once

#include <iosfwd>

namespace igs::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitPrecondition = 2;
inline constexpr int kExitViolation = 3;
inline constexpr int kExitUsage = 64;

// Entry point of the igs tool; output goes to `out`, diagnostics to `err`.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace igs::cli
