#pragma once

namespace sftik {

// Entry point for the command-line tool. Returns the process exit status:
// 0 success, 1 runtime failure, 2 usage error.
int run_cli(int argc, char** argv);

}  // namespace sftik
