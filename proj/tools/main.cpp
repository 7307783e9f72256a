#include <iostream>
#include <string>
#include <vector>

#include "cortex3d/cli.hpp"

int main(int argc, char** argv) {
    const std::vector<std::string> args(argv + 1, argv + argc);
    return cortex3d::run(args, std::cout, std::cerr);
}
