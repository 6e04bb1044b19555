#include "kbdm/cli.hpp"

int main(int argc, char** argv) { return kbdm::cli::run_cli(argc, argv); }
