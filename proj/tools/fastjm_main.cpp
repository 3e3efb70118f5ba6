#include <iostream>

#include "fastjm/cli.hpp"

int main(int argc, char** argv) { return fastjm::run_cli(argc, argv, std::cout, std::cerr); }
