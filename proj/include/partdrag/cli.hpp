#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace partdrag {

/// Entry point of the partdrag tool. args excludes the program name.
/// Returns the process exit status; messages go to out and err.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace partdrag
