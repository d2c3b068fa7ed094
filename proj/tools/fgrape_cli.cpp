// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "fgrape/cli.hpp"

int main(int argc, char** argv) {
  return fgrape::cli::main_entry(argc, argv, std::cout, std::cerr);
}
