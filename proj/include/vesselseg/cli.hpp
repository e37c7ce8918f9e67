#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace vesselseg {

/// Runs one `vesselseg` subcommand (train, eval, segment, metrics).
/// args excludes the program name. Returns 0 on success, 2 on usage errors
/// and 1 on any domain error, which is reported as a single line on err.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vesselseg
