#include "bidlab/cli.hpp"

int main(int argc, char** argv) { return bidlab::cli::run(argc, argv); }
