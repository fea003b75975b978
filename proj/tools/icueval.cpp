#include "icueval/cli.hpp"

int main(int argc, char** argv) { return icueval::cli_main(argc, argv); }
