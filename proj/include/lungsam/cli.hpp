#pragma once

#include <string>
#include <vector>

namespace lungsam {

/// Exit codes beyond 0 (success) and 1 (unexpected failure).
inline constexpr int kExitUsage = 2;
inline constexpr int kExitConfig = 3;
inline constexpr int kExitCheckpoint = 4;
inline constexpr int kExitData = 5;

/// The `lungsam` command line. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, char** argv);

}  // namespace lungsam
