#include <iostream>
#include <string>
#include <vector>

#include "selip/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return selip::dispatch(args, std::cout, std::cerr);
}
