#pragma once

#include <string>
#include <vector>

namespace duodiff {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2, kDataError = 3, kNumericError = 4 };

/// Entry point of the duodiff command-line tool; args excludes argv[0].
int run_cli(const std::vector<std::string>& args);

}  // namespace duodiff
