#include "vwl/cli.hpp"

int main(int argc, char** argv) { return vwl::run_cli(argc, argv); }
