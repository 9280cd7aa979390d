#include <iostream>

#include "rnnt/cli.hpp"

int main(int argc, char** argv) { return rnnt::cli::run(argc, argv, std::cout, std::cerr); }
