#include "cli.hpp"

int main(int argc, char** argv) {
    return btm::cli::main(argc, argv);
}
