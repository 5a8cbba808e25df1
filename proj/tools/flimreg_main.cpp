#include <iostream>

#include "flimreg/cli.hpp"

int main(int argc, char** argv) { return flimreg::cli::run(argc, argv, std::cout, std::cerr); }
