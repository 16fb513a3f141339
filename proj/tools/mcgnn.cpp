#include <iostream>

#include "mcgnn/cli.hpp"

int main(int argc, char** argv) {
  return mcgnn::cli::run_cli(argc, argv, std::cout, std::cerr);
}
