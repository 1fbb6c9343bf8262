#include "fedpoison/cli.hpp"

int main(int argc, char** argv) { return fedpoison::cli_main(argc, argv); }
