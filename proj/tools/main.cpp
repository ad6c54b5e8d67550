#include <iostream>

#include "whalesift/cli.hpp"

int main(int argc, char** argv) {
    return whalesift::cli::run_cli({argv + 1, argv + argc}, std::cout, std::cerr);
}
