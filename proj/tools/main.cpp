#include "cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return igs::cli::cli_main(argc, argv, std::cout, std::cerr); }
