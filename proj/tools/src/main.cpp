#include <iostream>

#include "contrastcat_cli/cli.hpp"

int main(int argc, char** argv) {
  return ccat::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
