#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace csiloc::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfigError = 2,
  kDataError = 3,
  kRejectedSample = 4,
};

/// Entry point of the `csiloc` tool. Never throws; every failure maps to an
/// exit code and a message on `err`.
int run(int argc, char** argv);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace csiloc::cli
