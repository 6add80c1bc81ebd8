#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace magfield::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumerical = 3;

/// Runs the command line `args` (program name first). Normal output goes to
/// `out`, diagnostics and skip notes to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace magfield::cli
