#include "sftik/cli.hpp"

int main(int argc, char** argv) { return sftik::run_cli(argc, argv); }
