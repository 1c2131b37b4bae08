#include "lungsam/cli.hpp"

int main(int argc, char** argv) { return lungsam::run_cli(argc, argv); }
