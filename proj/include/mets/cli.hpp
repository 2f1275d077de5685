#pragma once

#include <iosfwd>

namespace mets {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

/// Entry point of the `metsrisk` command. Subcommands: fit, predict,
/// threshold, simulate, compare, serve, geweke. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mets
