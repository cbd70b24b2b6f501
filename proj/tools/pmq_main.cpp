#include "pmq/cli.hpp"

int main(int argc, char** argv) { return pmq::cli::run(argc, argv); }
