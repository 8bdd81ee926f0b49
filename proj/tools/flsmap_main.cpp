#include "flsmap/cli.hpp"

int main(int argc, char** argv) { return flsmap::run_cli(argc, argv); }
