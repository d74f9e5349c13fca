#pragma once

#include <iosfwd>
#include <map>
#include <string>

namespace qan::cli {

enum ExitCode : int {
  kOk = 0,
  kOther = 1,
  kUsage = 2,
  kData = 3,
  kTransport = 4,
};

// Plain "key = value" lines; '#' starts a comment. Keys are long flag names
// without the leading dashes.
std::map<std::string, std::string> read_config(const std::string& path);

// Entry point of the `qan` tool. Never throws; returns an ExitCode.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace qan::cli
