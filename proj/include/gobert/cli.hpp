#pragma once

#include <iosfwd>

namespace gobert {

inline constexpr const char* kToolVersion = "0.1.0";

// Entry point for the `gobert` binary. Exit codes: 0 success, 1
// validation or domain failure, 2 usage error.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace gobert
