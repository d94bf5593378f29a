#include <iostream>

#include "refiner/cli.hpp"

int main(int argc, char** argv) { return refiner::cli::run(argc, argv, std::cout, std::cerr); }
