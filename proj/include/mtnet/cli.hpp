#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mtnet::cli {

inline constexpr const char* kToolName = "mtnet";
inline constexpr const char* kVersion = "0.1.0";

/// Process exit codes; stable for scripting.
enum ExitCode : int {
  kOk = 0,
  kUsage = 2,       // bad flags, config file or config/checkpoint mismatch
  kData = 3,        // dataset or image ingestion
  kDivergence = 4,  // non-finite loss or gradient
  kIo = 5,          // file system, corrupt checkpoint
};

/// Runs one command line (args[0] is the program name). Diagnostics go to
/// `err` as a single line; summaries go to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mtnet::cli
