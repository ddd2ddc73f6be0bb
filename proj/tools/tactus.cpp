#include <string>
#include <vector>

#include "tactus/cli.hpp"

int main(int argc, char** argv) {
    return tactus::cli_main(std::vector<std::string>(argv + 1, argv + argc));
}
