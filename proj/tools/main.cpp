#include "sepad/cli.hpp"

int main(int argc, char** argv) { return sepad::run_cli(argc, argv); }
