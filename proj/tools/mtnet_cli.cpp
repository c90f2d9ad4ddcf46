#include <iostream>
#include <string>
#include <vector>

#include "mtnet/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return mtnet::cli::run(args, std::cout, std::cerr);
}
