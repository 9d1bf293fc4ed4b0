#include <iostream>
#include <string>
#include <vector>

#include "tsp/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return tsp::cli::run(args, std::cout, std::cerr);
}
