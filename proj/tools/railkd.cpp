#include <iostream>

#include "railkd/cli.hpp"

int main(int argc, char** argv) {
  return railkd::run_cli({argv + 1, argv + argc}, std::cout, std::cerr);
}
