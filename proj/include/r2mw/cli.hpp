#pragma once

#include <string>

namespace r2mw {

/// Entry point behind the binary: subcommands train, enhance, eval, inspect.
/// Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
int cli_main(int argc, const char* const* argv);

/// Concatenated --help text of the app and every subcommand; each config key
/// appears with its default.
std::string cli_help_text();

}  // namespace r2mw
