#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace selip {

// Runs one command. `args` excludes the program name; args[0] is the command.
// Results go to `out`; errors are written to `err` as a JSON object.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

const std::vector<std::string>& command_names();

}  // namespace selip
