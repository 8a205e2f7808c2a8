#pragma once

#include <string>
#include <vector>

namespace hdseg::cli {

// Entry point behind the binary; args excludes the program name. Returns the
// process exit status; user errors come back as status 1 with a one-line
// message on stderr.
int run(std::vector<std::string> args);

}  // namespace hdseg::cli
