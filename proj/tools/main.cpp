#include "dtsurv/cli.hpp"

int main(int argc, char** argv) { return dtsurv::run_cli(argc, argv); }
