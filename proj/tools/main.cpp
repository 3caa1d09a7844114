#include <iostream>

#include "richrep/cli/app.hpp"

int main(int argc, char** argv) { return richrep::cli::run_cli(argc, argv, std::cout, std::cerr); }
