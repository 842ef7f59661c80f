#include "scalpel/cli.hpp"

int main(int argc, char** argv) { return scalpel::cli_main(argc, argv); }
