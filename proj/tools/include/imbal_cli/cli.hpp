#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace imbal::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitDiverged = 3;

/// Runs one command line (program name excluded) and returns the exit code.
/// Relative output paths resolve against $IMBAL_OUT_ROOT when it is set.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace imbal::cli
