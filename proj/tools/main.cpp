#include "csiloc/cli.hpp"

int main(int argc, char** argv) { return csiloc::cli::run(argc, argv); }
