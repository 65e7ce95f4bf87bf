#include "satflow/cli.hpp"

int main(int argc, char** argv) { return satflow::cli::main(argc, argv); }
