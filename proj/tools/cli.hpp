#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace edfa::cli {

/// Runs one CLI invocation. Returns 0 on success, 1 on a domain error (one
/// line "CATEGORY: message" on `err`) and 2 on a usage error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Environment variable naming the directory searched for config files that
/// are not found relative to the working directory.
inline constexpr const char* kConfigDirEnv = "EDFA_CONFIG_DIR";

}  // namespace edfa::cli
