#include <iostream>

#include "heal/cli.hpp"

int main(int argc, char** argv) { return heal::cli::run(argc, argv, std::cout, std::cerr); }
