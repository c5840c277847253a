#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace reportsmith {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUserError = 1;
inline constexpr int kExitProviderFailure = 2;

/// Runs one subcommand. args[0] is the program name.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace reportsmith
