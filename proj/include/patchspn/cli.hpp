#pragma once

namespace patchspn {

// Subcommand dispatcher behind the `patchspn` binary. Exit codes:
// 0 success, 1 usage error, 2 data/validation error, 3 numerical failure
// (diagnostics file written under the output root).
int run_cli(int argc, char** argv);

}  // namespace patchspn
