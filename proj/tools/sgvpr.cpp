#include "sgvpr/cli.hpp"

int main(int argc, char** argv) { return sgvpr::run_cli(argc, argv); }
