#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hgn {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumeric = 3;

/// Runs one command. args excludes the program name, e.g. {"train", "--data", "m.json", ...}.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hgn
