#include "drmo/cli.hpp"

int main(int argc, char** argv) { return drmo::run_cli(argc, argv); }
