#include "cli.hpp"

int main(int argc, char** argv) { return tspkit::cli::run(argc, argv); }
