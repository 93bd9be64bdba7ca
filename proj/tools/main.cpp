#include "cli.hpp"

int main(int argc, char** argv) { return noprop::cli::run(argc, argv); }
