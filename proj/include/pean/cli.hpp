#pragma once

namespace pean::cli {

// Entry point of the `pean` binary. Exit codes: 0 success, 2 usage/config,
// 3 I/O, 4 missing prerequisite, 5 numeric/shape failure.
int run(int argc, char** argv);

}  // namespace pean::cli
