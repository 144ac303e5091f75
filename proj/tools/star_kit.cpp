#include <iostream>

#include "star/cli.hpp"

int main(int argc, char** argv) {
  return star::cli::run(argc, argv, std::cout, std::cerr);
}
