#include <iostream>

#include "caprec/cli.hpp"

int main(int argc, char** argv) {
    return caprec::cli::run(argc, argv, std::cout, std::cerr);
}
