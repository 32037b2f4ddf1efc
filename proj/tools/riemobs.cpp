#include <iostream>

#include "riemobs/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return riemobs::run_cli(args, std::cout, std::cerr);
}
