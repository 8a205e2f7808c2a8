#include <string>
#include <vector>

#include "hdseg/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return hdseg::cli::run(std::move(args));
}
