#include "alita/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
    return alita::cli::run_cli(argc, argv, std::cout, std::cerr);
}
