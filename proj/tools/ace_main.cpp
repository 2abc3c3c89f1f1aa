#include <iostream>
#include <string>
#include <vector>

#include "ace/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return ace::cli::dispatch(args, std::cout, std::cerr);
}
