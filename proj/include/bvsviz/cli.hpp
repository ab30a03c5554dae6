#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace bvsviz {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;      // bad flags, missing files, invalid config
inline constexpr int kExitNumerical = 3;  // NaN/Inf or failed gradient check

/// The `bvsviz` command line. args[0] is the program name. Progress and
/// results go to out as `key=value` lines; diagnostics go to err.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bvsviz
