#include <iostream>

#include "mbfg/cli.hpp"

int main(int argc, char** argv) { return mbfg::run_cli(argc, argv, std::cout, std::cerr); }
