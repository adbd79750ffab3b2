#pragma once

// Command line front end. Exit codes: 0 success, 2 usage or configuration
// error, 3 I/O or malformed file, 4 numeric failure.

namespace sepad {

int run_cli(int argc, const char* const* argv);

}  // namespace sepad
