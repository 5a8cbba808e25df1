#pragma once

#include <ostream>

namespace flimreg::cli {

/// Runs one command. Returns 0 on success, 1 on a runtime failure and 2 on a
/// usage error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace flimreg::cli
