#include <iostream>

#include "imbal_cli/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return imbal::cli::run(args, std::cout, std::cerr);
}
