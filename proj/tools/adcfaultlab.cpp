#include "adcfaultlab/cli.hpp"

int main(int argc, char** argv) { return adcfaultlab::cli_main(argc, argv); }
