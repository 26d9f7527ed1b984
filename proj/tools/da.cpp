#include "da/cli.hpp"

int main(int argc, char** argv) { return da::run_cli(argc, argv); }
