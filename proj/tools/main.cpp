#include <iostream>

#include "bestn/cli.hpp"

int main(int argc, char** argv) { return bestn::run_cli(argc, argv, std::cout, std::cerr); }
