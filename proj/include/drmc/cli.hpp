#pragma once

#include <iosfwd>

namespace drmc::cli
{

/// Runs one subcommand. Returns 0 on success, 1 on a runtime failure, 2 on
/// a usage error; diagnostics go to err as one line.
int dispatch(int argc, const char *const *argv, std::ostream &out, std::ostream &err);

} // namespace drmc::cli
