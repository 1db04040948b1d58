#include <string>
#include <vector>

#include "grape/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return grape::cli::run(args);
}
