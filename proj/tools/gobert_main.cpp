#include <iostream>

#include "gobert/cli.hpp"

int main(int argc, char** argv) {
  return gobert::run_cli(argc, argv, std::cout, std::cerr);
}
