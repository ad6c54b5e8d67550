#pragma once

// The `whalesift` command: subcommands over one pipeline config.

#include <iosfwd>
#include <string>
#include <vector>

namespace whalesift::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomain = 1;
inline constexpr int kExitUsage = 2;

/// `args` excludes the program name. Returns the process exit status.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace whalesift::cli
