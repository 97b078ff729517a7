#include <iostream>

#include "vetcode/cli.hpp"

int main(int argc, char** argv) {
  return vetcode::cli::run({argv + 1, argv + argc}, std::cout, std::cerr);
}
