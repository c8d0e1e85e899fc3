#include "ptx/cli.hpp"

int main(int argc, char** argv) { return ptx::cli::run(argc, argv); }
