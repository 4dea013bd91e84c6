#include <iostream>
#include <string>
#include <vector>

#include "evoloop/cli.hpp"

int main(int argc, char** argv) {
  return evoloop::cli_dispatch(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
