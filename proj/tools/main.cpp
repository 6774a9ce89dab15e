#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) { return docmamba::cli::run_cli(argc, argv, std::cout, std::cerr); }
