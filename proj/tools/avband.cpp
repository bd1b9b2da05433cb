#include <iostream>

#include "avband_cli.hpp"

int main(int argc, char** argv) {
  return avband::cli::Run(argc, argv, std::cout, std::cerr);
}
