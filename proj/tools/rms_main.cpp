#include <iostream>

#include "rms/harness.hpp"

int main(int argc, char** argv) { return rms::cli_dispatch(argc, argv, std::cout, std::cerr); }
