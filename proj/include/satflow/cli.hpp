#pragma once
// Subcommand dispatcher behind the satflow executable.

#include <ostream>
#include <string>
#include <vector>

namespace satflow::cli {

/// `args` excludes the program name. Progress goes to `log`; a failure is
/// reported as one JSON line {"error": kind, "key": ..., "message": ...} on
/// `err`. Returns 0 on success, 2 for usage and configuration errors, 1 otherwise.
int run(const std::vector<std::string>& args, std::ostream& log, std::ostream& err);

int main(int argc, char** argv);

}  // namespace satflow::cli
