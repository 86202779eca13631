#include "objgan/cli.hpp"

int main(int argc, char** argv) { return objgan::cli::run(argc, argv); }
