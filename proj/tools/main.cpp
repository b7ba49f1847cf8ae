#include <iostream>

#include "extembed/cli.hpp"

int main(int argc, char** argv) { return extembed::cli::run(argc, argv, std::cout, std::cerr); }
