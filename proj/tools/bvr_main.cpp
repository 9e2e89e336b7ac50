#include <iostream>

#include "bvr/cli.hpp"

int main(int argc, char** argv) { return bvr::cli_main(argc, argv, std::cout, std::cerr); }
