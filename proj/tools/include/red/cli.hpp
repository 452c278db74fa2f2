#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace red::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kConfig = 2, kRuntime = 3 };

// Runs one command line (args excludes the program name). Normal output
// goes to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

inline constexpr const char* kRootSeedEnv = "RED_OFFLINE_ROOT_SEED";

}  // namespace red::cli
