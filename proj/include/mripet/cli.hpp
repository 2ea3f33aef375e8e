#pragma once

namespace mripet {

/// Entry point of the `mripet` command. Returns 0 on success, 1 on a usage
/// error and 2 when a subcommand fails at run time.
int run_cli(int argc, char **argv);

}  // namespace mripet
