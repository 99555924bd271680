#include <iostream>

#include "clif/cli.hpp"

int main(int argc, char** argv) { return clif::cli::run_main(argc, argv, std::cout, std::cerr); }
