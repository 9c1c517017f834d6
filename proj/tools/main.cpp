#include "latentmark/cli.hpp"

int main(int argc, char** argv) { return latentmark::cli_main(argc, argv); }
