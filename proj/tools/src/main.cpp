#include "mammoforge/cli/cli.hpp"

int main(int argc, char** argv) { return mammoforge::cli::run_cli(argc, argv); }
