#include <iostream>
#include <string>
#include <vector>

#include "partdrag/cli.hpp"

int main(int argc, char** argv) {
  return partdrag::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
