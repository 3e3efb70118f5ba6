#pragma once

#include <iosfwd>

namespace fastjm {

// Subcommands: simulate, fit, se, bench. Returns 0 on success, 2 for usage,
// configuration and schema errors, 1 for any other failure; messages go to err.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fastjm
