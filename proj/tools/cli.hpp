#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace uap::cli {

/// Process exit codes. Anything else is never returned.
enum ExitCode : int {
  kOk = 0,
  kCheckFailed = 1,  ///< gradcheck only: the error bound was exceeded
  kInvalidArgs = 2,
  kIoFailure = 3,
  kDegenerateDataset = 4,
  kHashMismatch = 5,
};

/// Runs the `uap` command line. args[0] is the program name. Reports go to
/// `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace uap::cli
