#include <iostream>

#include "pfsr/cli/commands.hpp"

int main(int argc, char** argv) { return pfsr::cli::run(argc, argv, std::cout, std::cerr); }
