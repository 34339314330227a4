#include "r2mw/cli.hpp"

int main(int argc, char** argv) { return r2mw::cli_main(argc, argv); }
