#include "inflatenn/cli.hpp"

int main(int argc, char** argv) { return inflatenn::cli_dispatch(argc, argv); }
