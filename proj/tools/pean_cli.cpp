#include "pean/cli.hpp"

int main(int argc, char** argv) { return pean::cli::run(argc, argv); }
