#include <iostream>

#include "parauni/cli.hpp"

int main(int argc, char** argv) { return parauni::cli::run(argc, argv, std::cout, std::cerr); }
