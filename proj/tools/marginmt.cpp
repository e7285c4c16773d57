#include <iostream>
#include <string>
#include <vector>

#include "marginmt/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return marginmt::run_cli(args, std::cout, std::cerr);
}
