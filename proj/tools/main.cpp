#include "cli.hpp"

int main(int argc, char** argv) { return cfx::cli::run(argc, argv); }
