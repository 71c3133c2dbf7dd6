#include "srm/cli.hpp"

int main(int argc, char** argv) { return srm::run_cli(argc, argv); }
