#include <iostream>

#include "reportsmith/cli.hpp"

int main(int argc, char** argv) {
  return reportsmith::cli_dispatch(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
