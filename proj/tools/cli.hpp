#pragma once

namespace noprop::cli {

// Full command-line entry point (train / eval / predict / check / bench-mem).
// Returns the process exit code: 0 success, 1 runtime failure, 2 usage error.
int run(int argc, const char* const* argv);

}  // namespace noprop::cli
