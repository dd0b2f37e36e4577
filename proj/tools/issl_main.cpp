#include "issl/cli.hpp"

int main(int argc, char** argv) { return issl::cli::run(argc, argv); }
