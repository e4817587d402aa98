#include <iostream>

#include "sinformer/cli.hpp"

int main(int argc, char** argv) { return sinformer::cli::run_cli(argc, argv, std::cout, std::cerr); }
