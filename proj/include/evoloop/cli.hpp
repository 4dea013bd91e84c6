#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace evoloop {

// argv[0] is the program name. Subcommands: evolve, eval, blame, report, replay.
// Returns the process exit status; typed error names go to `err`.
int cli_dispatch(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

}  // namespace evoloop
