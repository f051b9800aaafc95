#include <iostream>

#include "biaslens/commands.hpp"

int main(int argc, char** argv) { return biaslens::cli::run(argc, argv, std::cout, std::cerr); }
