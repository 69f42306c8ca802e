#pragma once

namespace dtsurv {

// Full command-line entry point. Exit codes: 0 success, 1 runtime failure,
// 2 usage or config error.
int run_cli(int argc, char** argv);

}  // namespace dtsurv
