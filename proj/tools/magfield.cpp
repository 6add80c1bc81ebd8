#include <iostream>
#include <string>
#include <vector>

#include "magfield/cli.hpp"

int main(int argc, char** argv) {
  return magfield::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
