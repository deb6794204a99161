#pragma once

#include <string>
#include <vector>

namespace refmatch {

inline constexpr const char* kToolVersion = "0.1.0";

/// Dispatches one CLI invocation (argv without the program name). Returns
/// 0 on success, 1 on validation/usage errors, 2 on internal errors.
/// Errors are emitted as single-line JSON on stderr.
int run_command(const std::vector<std::string>& args);

}  // namespace refmatch
