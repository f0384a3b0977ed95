#include <iostream>

#include "casdet/cli/commands.hpp"

int main(int argc, char** argv) {
  return casdet::cli::run(argc, argv, std::cout, std::cerr);
}
