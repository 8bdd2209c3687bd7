#include "smallobj/cli.hpp"

int main(int argc, char** argv) { return smallobj::cli_main(argc, argv); }
