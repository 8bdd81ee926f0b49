#pragma once

namespace flsmap {

/// Command-line entry point. Returns the process exit code: 0 on success,
/// 2 on usage/configuration errors, 1 on runtime failure.
int run_cli(int argc, const char* const* argv);

}  // namespace flsmap
