#include <iostream>

#include "treeot/cli.hpp"

int main(int argc, char** argv) { return treeot::cli::run_cli(argc, argv, std::cout, std::cerr); }
