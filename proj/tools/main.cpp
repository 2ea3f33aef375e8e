#include "mripet/cli.hpp"

int main(int argc, char **argv) { return mripet::run_cli(argc, argv); }
