#include <iostream>
#include <string>
#include <vector>

#include "bvsviz/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return bvsviz::run_cli(args, std::cout, std::cerr);
}
