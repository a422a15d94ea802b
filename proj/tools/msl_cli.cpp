#include <iostream>

#include "msl/harness.hpp"

int main(int argc, char** argv) {
  return msl::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
