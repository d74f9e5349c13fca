#include <iostream>

#include "qan/cli.hpp"

int main(int argc, char** argv) { return qan::cli::run_cli(argc, argv, std::cout, std::cerr); }
