#include <string>
#include <vector>

#include "refmatch/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return refmatch::run_command(args);
}
