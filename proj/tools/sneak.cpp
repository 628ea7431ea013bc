#include "sneak/cli.hpp"

int main(int argc, char** argv) { return sneak::cli::run_cli(argc, argv); }
